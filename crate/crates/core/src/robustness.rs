//! Image perturbations, robustness reports and targeted PGD.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::{check_class, single_image, Explainable};
use crate::metrics::MetricsReport;
use crate::model::FgrNetParams;
use crate::synth::blur_planes;
use crate::tensor::{Real, Tape, Tensor};
use crate::training::{predict_all, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationKind {
    /// Gaussian blur, parameter = sigma in pixels.
    GaussianBlur,
    /// Zero-mean Gaussian noise, parameter = standard deviation.
    AdditiveGaussian,
    /// `x^gamma`.
    GammaContrast,
    /// Shot noise `Poisson(lambda * x) / lambda`, parameter = lambda.
    AdditivePoisson,
    /// Isotropic scaling about the image centre.
    Affine,
    /// Global intensity factor.
    Multiplicative,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 6] = [
        PerturbationKind::GaussianBlur,
        PerturbationKind::AdditiveGaussian,
        PerturbationKind::GammaContrast,
        PerturbationKind::AdditivePoisson,
        PerturbationKind::Affine,
        PerturbationKind::Multiplicative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::GaussianBlur => "GaussianBlur",
            PerturbationKind::AdditiveGaussian => "AdditiveGaussian",
            PerturbationKind::GammaContrast => "GammaContrast",
            PerturbationKind::AdditivePoisson => "AdditivePoisson",
            PerturbationKind::Affine => "Affine",
            PerturbationKind::Multiplicative => "Multiplicative",
        }
    }

    pub fn default_range(self) -> [f64; 2] {
        match self {
            PerturbationKind::GaussianBlur => [0.5, 1.5],
            PerturbationKind::AdditiveGaussian => [0.5 / 255.0, 0.04],
            PerturbationKind::GammaContrast => [0.5, 1.5],
            PerturbationKind::AdditivePoisson => [10.0, 10.0],
            PerturbationKind::Affine => [0.5, 1.5],
            PerturbationKind::Multiplicative => [0.1, 5.5],
        }
    }

    /// Parameter value that leaves every image unchanged.
    pub fn identity(self) -> f64 {
        match self {
            PerturbationKind::GaussianBlur | PerturbationKind::AdditiveGaussian => 0.0,
            PerturbationKind::AdditivePoisson => f64::INFINITY,
            _ => 1.0,
        }
    }

    fn admits(self, v: f64) -> bool {
        match self {
            PerturbationKind::GaussianBlur => (0.0..=20.0).contains(&v),
            PerturbationKind::AdditiveGaussian | PerturbationKind::Multiplicative => v.is_finite() && v >= 0.0,
            PerturbationKind::GammaContrast | PerturbationKind::Affine => v.is_finite() && v > 0.0,
            PerturbationKind::AdditivePoisson => v > 0.0,
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    /// Case-insensitive; `-` and `_` are ignored, so `gaussian-blur` works.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().to_ascii_lowercase() == key)
            .or(match key.as_str() {
                "multiply" => Some(PerturbationKind::Multiplicative),
                "blur" => Some(PerturbationKind::GaussianBlur),
                "gamma" => Some(PerturbationKind::GammaContrast),
                "poisson" => Some(PerturbationKind::AdditivePoisson),
                "gaussian" | "noise" => Some(PerturbationKind::AdditiveGaussian),
                "scale" => Some(PerturbationKind::Affine),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown perturbation '{s}'")))
    }
}

/// A perturbation kind, the closed interval its parameter is drawn from,
/// and the seed of that draw and of any noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub range: [f64; 2],
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, seed: u64) -> Self {
        Self {
            kind,
            range: kind.default_range(),
            seed,
        }
    }

    pub fn fixed(kind: PerturbationKind, value: f64, seed: u64) -> Self {
        Self {
            kind,
            range: [value, value],
            seed,
        }
    }

    pub fn identity(kind: PerturbationKind) -> Self {
        Self::fixed(kind, kind.identity(), 0)
    }

    /// One spec per kind with the standard ranges.
    pub fn standard_set(seed: u64) -> Vec<Self> {
        PerturbationKind::ALL.into_iter().map(|k| Self::new(k, seed)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.range;
        if lo.is_nan() || hi.is_nan() || lo > hi || !self.kind.admits(lo) || !self.kind.admits(hi) {
            return Err(Error::InvalidArgument(format!(
                "invalid {} range [{lo}, {hi}]",
                self.kind
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let [lo, hi] = self.range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

fn reflect(i: i64, n: usize) -> Option<usize> {
    let period = 2 * n as i64;
    let m = i.rem_euclid(period);
    Some(if m < n as i64 { m } else { period - 1 - m } as usize)
}

fn scale_about_centre(src: &[f64], h: usize, w: usize, s: f64) -> Vec<f64> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |p: &[f64], y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            p[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; src.len()];
    for (dst, p) in out.chunks_mut(h * w).zip(src.chunks(h * w)) {
        for y in 0..h {
            let sy = cy + (y as f64 - cy) / s;
            let (y0, ty) = (sy.floor(), sy - sy.floor());
            for x in 0..w {
                let sx = cx + (x as f64 - cx) / s;
                let (x0, tx) = (sx.floor(), sx - sx.floor());
                let (y0, x0) = (y0 as i64, x0 as i64);
                let top = (1.0 - tx) * at(p, y0, x0) + tx * at(p, y0, x0 + 1);
                let bottom = (1.0 - tx) * at(p, y0 + 1, x0) + tx * at(p, y0 + 1, x0 + 1);
                dst[y * w + x] = (1.0 - ty) * top + ty * bottom;
            }
        }
    }
    out
}

/// Applies `spec` to a `[C, H, W]` or `[B, C, H, W]` image in `[0, 1]`.
pub fn perturb(image: &Tensor, spec: &PerturbationSpec) -> Result<Tensor> {
    perturb_indexed(image, spec, 0)
}

/// As [`perturb`], drawing from stream `index` of the spec's seed so that
/// every image of a set gets its own independent draw.
pub fn perturb_indexed(image: &Tensor, spec: &PerturbationSpec, index: u64) -> Result<Tensor> {
    spec.validate()?;
    let shape = image.shape();
    if shape.len() < 2 {
        return Err(Error::contract("perturb", format!("expected an image, got shape {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let p = spec.draw(&mut rng);
    let mut data: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    match spec.kind {
        PerturbationKind::GaussianBlur => blur_planes(&mut data, h, w, p, reflect),
        PerturbationKind::AdditiveGaussian => {
            if p > 0.0 {
                let n = Normal::new(0.0, p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                data.iter_mut().for_each(|v| *v += n.sample(&mut rng));
            }
        }
        PerturbationKind::GammaContrast => data.iter_mut().for_each(|v| *v = v.max(0.0).powf(p)),
        PerturbationKind::AdditivePoisson => {
            if p.is_finite() {
                for v in data.iter_mut() {
                    let rate = p * v.max(0.0);
                    *v = if rate > 0.0 {
                        Poisson::new(rate)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?
                            .sample(&mut rng)
                            / p
                    } else {
                        0.0
                    };
                }
            }
        }
        PerturbationKind::Affine => data = scale_about_centre(&data, h, w, p),
        PerturbationKind::Multiplicative => data.iter_mut().for_each(|v| *v *= p),
    }
    Tensor::new(shape, data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub noise_type: String,
    pub spec: Option<PerturbationSpec>,
    pub metrics: MetricsReport,
}

/// Clean row first, then one row per perturbation, all over the same images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn clean(&self) -> &RobustnessRow {
        &self.rows[0]
    }

    /// Tab-separated, one header line then one line per row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("noise_type\taccuracy\tprecision\trecall\tf1\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                r.noise_type, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
            );
        }
        s
    }
}

pub fn robustness_report(
    params: &FgrNetParams,
    examples: &[Example],
    specs: &[PerturbationSpec],
) -> Result<RobustnessReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples for the robustness report".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let k = params.config().num_classes;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let score = |set: &[Example]| -> Result<MetricsReport> {
        MetricsReport::from_predictions(&predict_all(params, set, 16)?, &labels, k)
    };
    let mut rows = vec![RobustnessRow {
        noise_type: "Clean".into(),
        spec: None,
        metrics: score(examples)?,
    }];
    for spec in specs {
        let perturbed = examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Ok(Example {
                    image: perturb_indexed(&e.image, spec, i as u64)?,
                    label: e.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RobustnessRow {
            noise_type: spec.kind.to_string(),
            spec: Some(*spec),
            metrics: score(&perturbed)?,
        });
    }
    Ok(RobustnessReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    pub radius: f64,
    pub target_class: usize,
}

impl AttackConfig {
    pub fn targeted(target_class: usize) -> Self {
        Self {
            steps: 20,
            step_size: 0.01,
            radius: 0.13,
            target_class,
        }
    }

    /// A zero radius is accepted and pins the image in place.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("attack needs at least one step".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {} must be positive", self.step_size)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) || (self.radius > 0.0 && self.step_size > self.radius) {
            return Err(Error::InvalidArgument(format!(
                "radius {} must be non-negative and at least the step size {}",
                self.radius, self.step_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult<T: Real = f32> {
    pub adversarial: Tensor<T>,
    /// Target-class probability at the start and after every step.
    pub probabilities: Vec<f64>,
}

impl<T: Real> AttackResult<T> {
    pub fn initial_probability(&self) -> f64 {
        self.probabilities[0]
    }

    pub fn final_probability(&self) -> f64 {
        *self.probabilities.last().expect("trace is never empty")
    }
}

fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Rounds `v` into `T` so that the stored value is still in `[0, 1]` and
/// within `radius` of `origin` when measured in `f64`.
fn inside<T: Real>(v: f64, origin: f64, radius: f64) -> T {
    let ok = |t: T| {
        let t = t.as_f64();
        (0.0..=1.0).contains(&t) && (t - origin).abs() <= radius
    };
    let first = T::from_f64(v);
    let toward = if first.as_f64() > origin { -T::one() } else { T::one() };
    let mut t = first;
    let mut d = T::epsilon() * first.abs().max(T::min_positive_value());
    while !ok(t) {
        t = first + toward * d;
        d = d + d;
    }
    t
}

/// Targeted PGD. `on_iterate` sees the starting image and every projected
/// iterate.
pub fn pgd_attack_with<T: Real, M: Explainable<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    cfg: &AttackConfig,
    mut on_iterate: impl FnMut(usize, &Tensor<T>),
) -> Result<AttackResult<T>> {
    cfg.validate()?;
    check_class(model, cfg.target_class)?;
    let x0 = single_image(model.input_dims(), image)?;
    let bounds: Vec<(f64, f64)> = x0
        .data()
        .iter()
        .map(|v| {
            let v = v.as_f64();
            ((v - cfg.radius).max(0.0), (v + cfg.radius).min(1.0))
        })
        .collect();
    let mut x = x0.clone();
    on_iterate(0, &x);
    let mut probabilities = Vec::with_capacity(cfg.steps + 1);
    for step in 1..=cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let logits = model.logits_on(&mut tape, xv)?;
        let probs = softmax(tape.value(logits));
        probabilities.push(probs[cfg.target_class]);
        // d CE / d logits = softmax - onehot, without the probability clamp
        let mut seed = probs;
        seed[cfg.target_class] -= 1.0;
        let seed = tape.constant(Tensor::from_f64(tape.value(logits).shape(), &seed)?);
        let weighted = tape.mul(logits, seed)?;
        let loss = tape.sum(weighted);
        tape.backward(loss)?;
        let g = tape.take_grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
        for (((v, gv), &(lo, hi)), origin) in x.data_mut().iter_mut().zip(g.data()).zip(&bounds).zip(x0.data()) {
            let gv = gv.as_f64();
            let dir = if gv > 0.0 {
                1.0
            } else if gv < 0.0 {
                -1.0
            } else {
                0.0
            };
            let next = (v.as_f64() - cfg.step_size * dir).clamp(lo, hi);
            *v = inside(next, origin.as_f64(), cfg.radius);
        }
        on_iterate(step, &x);
    }
    probabilities.push(softmax(&model.logits(&x)?)[cfg.target_class]);
    Ok(AttackResult {
        adversarial: x,
        probabilities,
    })
}

pub fn pgd_attack<T: Real, M: Explainable<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    pgd_attack_with(model, image, cfg, |_, _| {})
}

/// Largest absolute pixel difference.
pub fn linf_distance<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}
