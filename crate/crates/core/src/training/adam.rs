use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, kept in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Real>(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. `names` labels parameters in the
/// non-finite gradient diagnostic; nothing is modified when it fires.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[&str],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            axis: "parameter count",
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::contract(
                "adam_step",
                format!("gradient {i} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
            ));
        }
        if !g.is_finite() {
            let param = names.get(i).map_or_else(|| format!("#{i}"), |n| n.to_string());
            return Err(Error::NonFiniteGradient { param });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.as_f64();
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let step = cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            *w = T::from_f64(w.as_f64() - step);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64(&[1], &[v]).unwrap()]
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.25, 1e3] {
            let mut p = scalar(0.0);
            let mut s = AdamState::new(&p);
            let cfg = AdamConfig::default();
            adam_step(&mut p, &scalar(g), &["theta"], &mut s, &cfg).unwrap();
            let moved = p[0].data()[0];
            // g / (|g| + eps) differs from sign(g) by eps/|g|
            assert!((moved + cfg.lr * g.signum()).abs() < 1e-10, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op_but_counts() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &["theta"], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data()[0], 1.5);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..200 {
            let g = scalar(2.0 * p[0].data()[0]);
            adam_step(&mut p, &g, &["theta"], &mut s, &cfg).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-2, "{}", p[0].data()[0]);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &scalar(f64::NAN), &["encoder.stage0.conv0.weight"], &mut s, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("encoder.stage0.conv0.weight"));
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(s.t, 0);
    }
}
