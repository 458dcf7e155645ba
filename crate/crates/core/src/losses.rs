//! Reconstruction and classification objectives.
//!
//! Reductions accumulate in `f64` regardless of the tensor precision so
//! single-precision training sees the same loss values a double run would,
//! up to the rounding of the inputs themselves.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// SSIM luminance stabiliser, `0.01^2`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// SSIM contrast stabiliser, `0.03^2`.
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Lower clamp on class probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which reconstruction objective the autoencoder minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecLoss {
    #[default]
    Mse,
    Mae,
    Ssim,
}

impl std::str::FromStr for RecLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(RecLoss::Mse),
            "mae" => Ok(RecLoss::Mae),
            "ssim" => Ok(RecLoss::Ssim),
            other => Err(Error::InvalidArgument(format!("unknown reconstruction loss `{other}`"))),
        }
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(
            op,
            format!("shape {:?} does not match {:?}", a.shape(), b.shape()),
        ));
    }
    if a.is_empty() {
        return Err(Error::contract(op, "empty tensors"));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse<T: Real>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape("mse", recon, target)?;
    let s: f64 = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(s / recon.len() as f64)
}

/// Mean absolute error.
pub fn mae<T: Real>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape("mae", recon, target)?;
    let s: f64 = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(s / recon.len() as f64)
}

/// SSIM from whole-image statistics (population variance and covariance),
/// treating every element of the tensors as one image.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    Ok(ssim_slices(a.data(), b.data(), None))
}

/// `1 - ssim(a, b)`.
pub fn ssim_loss<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(1.0 - ssim(a, b)?)
}

/// Global SSIM of two slices. When `grads` is given, the partial derivatives
/// with respect to each element of `a` and `b` are written into it.
pub(crate) fn ssim_slices<T: Real>(a: &[T], b: &[T], grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mu_b = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x.as_f64() - mu_a, y.as_f64() - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;

    let lum_num = 2.0 * mu_a * mu_b + SSIM_C1;
    let con_num = 2.0 * cov + SSIM_C2;
    let lum_den = mu_a * mu_a + mu_b * mu_b + SSIM_C1;
    let con_den = var_a + var_b + SSIM_C2;
    let s = (lum_num * con_num) / (lum_den * con_den);

    if let Some((ga, gb)) = grads {
        // d s = s * (dA1/A1 + dA2/A2 - dB1/B1 - dB2/B2)
        for i in 0..a.len() {
            let (dx, dy) = (a[i].as_f64() - mu_a, b[i].as_f64() - mu_b);
            ga[i] = s / n
                * (2.0 * mu_b / lum_num + 2.0 * dy / con_num
                    - 2.0 * mu_a / lum_den
                    - 2.0 * dx / con_den);
            gb[i] = s / n
                * (2.0 * mu_a / lum_num + 2.0 * dx / con_num
                    - 2.0 * mu_b / lum_den
                    - 2.0 * dy / con_den);
        }
    }
    s
}

/// Mean over the batch of `-log softmax(logits)[target]`, with the
/// probability clamped below at [`PROB_FLOOR`].
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    let (loss, _) = cross_entropy_parts(logits, targets)?;
    Ok(loss)
}

/// Loss value plus per-row softmax probabilities and clamp flags, shared by
/// the tape op.
pub(crate) fn cross_entropy_parts<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(f64, Vec<(Vec<f64>, bool)>)> {
    let [rows, k] = match logits.shape() {
        &[r, k] => [r, k],
        s => {
            return Err(Error::Dimension {
                op: "cross_entropy",
                axis: "rank",
                expected: 2,
                got: s.len(),
            })
        }
    };
    if targets.len() != rows {
        return Err(Error::Dimension {
            op: "cross_entropy",
            axis: "batch",
            expected: rows,
            got: targets.len(),
        });
    }
    if rows == 0 {
        return Err(Error::contract("cross_entropy", "empty batch"));
    }
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(rows);
    for (r, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: target {t} out of range for {k} classes"
            )));
        }
        let row: Vec<f64> = logits.data()[r * k..(r + 1) * k].iter().map(|v| v.as_f64()).collect();
        let probs = softmax(&row);
        let log_p = log_softmax_at(&row, t);
        let clamped = log_p < PROB_FLOOR.ln();
        total += if clamped { -PROB_FLOOR.ln() } else { -log_p };
        parts.push((probs, clamped));
    }
    Ok((total / rows as f64, parts))
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[t] - lse
}

/// `alpha * rec + (1 - alpha) * cls`.
pub fn combined_loss(rec_loss: f64, cls_loss: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * rec_loss + (1.0 - alpha) * cls_loss)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}
