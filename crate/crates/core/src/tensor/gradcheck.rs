use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so entries whose true gradient is
/// zero are compared in absolute terms.
const REL_FLOOR: f64 = 1e-5;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per input, `|a - n| / max(|a|, |n|, 1e-5)`.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().cloned().fold(0.0, f64::max)
    }

    /// Compares two gradient sets elementwise.
    pub fn compare(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>], tolerance: f64) -> Self {
        let max_rel_error: Vec<f64> = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| {
                a.data()
                    .iter()
                    .zip(n.data())
                    .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
                    .fold(0.0, f64::max)
            })
            .collect();
        let passed = max_rel_error.iter().all(|&e| e < tolerance);
        GradCheckReport {
            max_rel_error,
            tolerance,
            passed,
        }
    }
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Gradients of the scalar function `f` by reverse mode.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Central-difference gradients of the scalar function `f`.
pub fn numeric_gradients<F>(f: &F, inputs: &[Tensor<f64>], step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Checks reverse-mode gradients of `f` at `inputs` against central
/// differences with the given step.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    let numeric = numeric_gradients(&f, inputs, step)?;
    Ok(GradCheckReport::compare(&analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(t: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    }

    #[test]
    fn detects_injected_fault() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.5, 2.0]).unwrap();
        let analytic = analytic_gradients(&quad, &[x.clone()]).unwrap();
        let numeric = numeric_gradients(&quad, &[x], 1e-4).unwrap();
        assert!(GradCheckReport::compare(&analytic, &numeric, 1e-4).passed);
        let corrupted: Vec<_> = analytic.iter().map(|g| g.map(|v| v * 1.01)).collect();
        let report = GradCheckReport::compare(&corrupted, &numeric, 1e-4);
        assert!(!report.passed);
        assert!(report.worst() > 5e-3);
    }

    #[test]
    fn linear_is_exact() {
        let x = Tensor::from_f64(&[2, 3], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let w = Tensor::from_f64(&[3, 2], &[1.0, -2.0, 0.5, 0.25, -1.0, 3.0]).unwrap();
        let b = Tensor::from_f64(&[2], &[0.1, -0.1]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                Ok(t.sum(y))
            },
            &[x, w, b],
            1e-4,
            1e-8,
        )
        .unwrap();
        assert!(r.passed, "{:?}", r.max_rel_error);
    }
}
