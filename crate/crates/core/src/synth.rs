//! Procedural fundus-like images with controllable quality degradation.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{quantize, read_ppm, write_ppm};
use crate::tensor::Tensor;
use crate::training::Example;

/// Smallest in-aperture channel value, so the aperture is never black.
const FLOOR: f32 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// 0 = ungradable, 1 = gradable.
    TwoClass,
    /// 0 = reject, 1 = usable, 2 = good.
    ThreeClass,
}

impl Scheme {
    pub fn num_classes(self) -> usize {
        match self {
            Scheme::TwoClass => 2,
            Scheme::ThreeClass => 3,
        }
    }

    /// Closed severity interval sampled for `label`.
    pub fn severity_band(self, label: usize) -> (f64, f64) {
        match (self, label) {
            (Scheme::TwoClass, 0) => (0.6, 1.0),
            (Scheme::TwoClass, _) => (0.0, 0.1),
            (Scheme::ThreeClass, 0) => (0.7, 1.0),
            (Scheme::ThreeClass, 1) => (0.3, 0.5),
            (Scheme::ThreeClass, _) => (0.0, 0.1),
        }
    }

    /// Class whose band contains `severity`, if any.
    pub fn label_for(self, severity: f64) -> Option<usize> {
        (0..self.num_classes()).find(|&c| {
            let (lo, hi) = self.severity_band(c);
            (lo..=hi).contains(&severity)
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::TwoClass => "two_class",
            Scheme::ThreeClass => "three_class",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_class" | "2" => Ok(Scheme::TwoClass),
            "three_class" | "3" => Ok(Scheme::ThreeClass),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Everything needed to regenerate a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub vessels: usize,
    pub severity: f64,
    pub blur_sigma: f64,
    pub exposure: f64,
    pub contrast: f64,
    pub haze: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `[3, S, S]` in `[0, 1]`, quantised to 8-bit levels.
    pub image: Tensor,
    pub label: usize,
    pub scheme: Scheme,
    pub gen_params: GenParams,
}

impl SyntheticSample {
    pub fn example(&self) -> Example {
        Example {
            image: self.image.clone(),
            label: self.label,
        }
    }
}

/// Strength of each degradation actually applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub severity: f64,
    pub blur_sigma: f64,
    pub exposure: f64,
    pub contrast: f64,
    pub haze: f64,
}

/// Sum of squared horizontal and vertical neighbour differences over all
/// channels of a `[.., H, W]` image.
pub fn high_frequency_energy(image: &Tensor) -> f64 {
    let s = image.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut e = 0.0;
    for p in image.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                let v = p[y * w + x] as f64;
                if x + 1 < w {
                    e += (p[y * w + x + 1] as f64 - v).powi(2);
                }
                if y + 1 < h {
                    e += (p[(y + 1) * w + x] as f64 - v).powi(2);
                }
            }
        }
    }
    e
}

struct Geometry {
    center: f64,
    radius: f64,
}

impl Geometry {
    fn new(size: usize) -> Self {
        Geometry {
            center: (size as f64 - 1.0) / 2.0,
            radius: 0.47 * size as f64,
        }
    }

    fn inside(&self, y: f64, x: f64) -> bool {
        (y - self.center).hypot(x - self.center) <= self.radius
    }
}

fn paint_disc(mask: &mut [f64], size: usize, cy: f64, cx: f64, width: f64, strength: f64) {
    let reach = width + 1.0;
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let y1 = ((cy + reach).ceil() as usize).min(size - 1);
    let x1 = ((cx + reach).ceil() as usize).min(size - 1);
    if cy + reach < 0.0 || cx + reach < 0.0 {
        return;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (y as f64 - cy).hypot(x as f64 - cx);
            let cover = (width / 2.0 - d + 0.5).clamp(0.0, 1.0) * strength;
            let m = &mut mask[y * size + x];
            *m = m.max(cover);
        }
    }
}

/// Renders a clean fundus-like image; returns it with its vessel count.
fn render(seed: u64, size: usize) -> (Tensor, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::new(size);
    let r = g.radius;
    let scale = size as f64 / 64.0;

    let base = [rng.random_range(0.70..0.85), rng.random_range(0.30..0.42), rng.random_range(0.10..0.20)];
    let tilt_angle = rng.random_range(0.0..2.0 * PI);
    let tilt = rng.random_range(0.0..0.15);

    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let disk_x = g.center + side * rng.random_range(0.28..0.36) * r;
    let disk_y = g.center + rng.random_range(-0.08..0.08) * r;
    let disk_a = rng.random_range(0.09..0.12) * r;
    let disk_b = disk_a * rng.random_range(1.05..1.25);
    let mac_x = g.center - side * rng.random_range(0.12..0.20) * r;
    let mac_y = g.center + rng.random_range(-0.05..0.05) * r;
    let mac_r = rng.random_range(0.12..0.16) * r;

    // vessel tree: biased random walks from the disk rim, with branching
    let mut vessel = vec![0.0f64; size * size];
    let trunks = rng.random_range(6..=10);
    let mut stack: Vec<(f64, f64, f64, f64)> = (0..trunks)
        .map(|_| {
            let phi = rng.random_range(0.0..2.0 * PI);
            let (y, x) = (disk_y + disk_b * phi.sin(), disk_x + disk_a * phi.cos());
            (y, x, phi, rng.random_range(0.9..1.5) * scale)
        })
        .collect();
    let mut segments = 0;
    while let Some((mut y, mut x, mut heading, mut width)) = stack.pop() {
        segments += 1;
        let mut travelled = 0.0;
        while g.inside(y, x) && travelled < 1.5 * r && width > 0.3 {
            paint_disc(&mut vessel, size, y, x, width, 0.85);
            heading += rng.random_range(-0.2..0.2);
            y += 0.5 * heading.sin();
            x += 0.5 * heading.cos();
            travelled += 0.5;
            width *= 0.997;
            if segments < 40 && rng.random_bool(0.015) {
                let turn = rng.random_range(0.4..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                stack.push((y, x, heading + turn, width * 0.7));
            }
        }
    }

    let disk_color = [0.98, 0.88, 0.62];
    let vessel_absorb = [0.45, 0.6, 0.5];
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for yi in 0..size {
        for xi in 0..size {
            let (y, x) = (yi as f64, xi as f64);
            if !g.inside(y, x) {
                continue;
            }
            let (dy, dx) = (y - g.center, x - g.center);
            let radial = 1.0 - 0.35 * (dy.hypot(dx) / r).powi(2);
            let illum = 1.0 + tilt * (dx * tilt_angle.cos() + dy * tilt_angle.sin()) / r;
            let mac = (-((y - mac_y).hypot(x - mac_x) / mac_r).powi(2)).exp();
            let e = (((x - disk_x) / disk_a).powi(2) + ((y - disk_y) / disk_b).powi(2)).sqrt();
            let disk = 1.0 / (1.0 + ((e - 1.0) * 8.0).exp());
            let v = vessel[yi * size + xi];
            for c in 0..3 {
                let mut val = base[c] * radial * illum * (1.0 - 0.45 * mac);
                val = val * (1.0 - disk) + disk_color[c] * disk;
                val *= 1.0 - v * vessel_absorb[c];
                data[c * plane + yi * size + xi] = (val as f32).clamp(FLOOR, 1.0);
            }
        }
    }
    let img = Tensor::new(&[3, size, size], data).expect("shape");
    (floor_inside(&quantize(&img), &aperture(size)), trunks)
}

fn check_size(size: usize) -> Result<()> {
    if size < 32 {
        return Err(Error::InvalidArgument(format!("image size must be at least 32, got {size}")));
    }
    Ok(())
}

/// Clean `[3, S, S]` image; deterministic in `seed`.
pub fn generate_fundus(seed: u64, size: usize) -> Result<Tensor> {
    check_size(size)?;
    Ok(render(seed, size).0)
}

/// In-aperture flags in row-major order.
pub fn aperture(size: usize) -> Vec<bool> {
    let g = Geometry::new(size);
    (0..size * size)
        .map(|i| g.inside((i / size) as f64, (i % size) as f64))
        .collect()
}

fn floor_inside(image: &Tensor, mask: &[bool]) -> Tensor {
    let mut out = image.clone();
    for p in out.data_mut().chunks_mut(mask.len()) {
        for (v, &m) in p.iter_mut().zip(mask) {
            *v = if m { v.max(FLOOR) } else { 0.0 };
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of each `h x w` plane; `edge` maps an
/// out-of-range index to a source index or `None` for zero fill.
pub(crate) fn blur_planes(data: &mut [f64], h: usize, w: usize, sigma: f64, edge: impl Fn(i64, usize) -> Option<usize>) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for p in data.chunks_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    if let Some(sx) = edge(x as i64 + j as i64 - r, w) {
                        acc += kv * p[y * w + sx];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    if let Some(sy) = edge(y as i64 + j as i64 - r, h) {
                        acc += kv * tmp[sy * w + x];
                    }
                }
                p[y * w + x] = acc;
            }
        }
    }
}

fn zero_fill(i: i64, n: usize) -> Option<usize> {
    (0..n as i64).contains(&i).then_some(i as usize)
}

/// Degrades a clean `[3, S, S]` image with blur, uneven illumination,
/// under-exposure, contrast loss and haze, all scaled by `severity`. The
/// random draws do not depend on `severity`, so for a fixed `rng` state a
/// higher severity never sharpens the result.
pub fn degrade<R: Rng + ?Sized>(image: &Tensor, severity: f64, rng: &mut R) -> Result<(Tensor, Degradation)> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity {severity} outside [0, 1]")));
    }
    let [c, h, w] = match *image.shape() {
        [c, h, w] if h == w => [c, h, w],
        _ => return Err(Error::contract("degrade", format!("expected [C, S, S], got {:?}", image.shape()))),
    };
    let haze_color = [rng.random_range(0.55..0.75), rng.random_range(0.50..0.65), rng.random_range(0.45..0.60)];
    let illum_angle = rng.random_range(0.0..2.0 * PI);
    let unevenness = rng.random_range(0.3..0.6);
    let darkening = rng.random_range(0.55..0.7);

    let s = severity;
    let applied = Degradation {
        severity: s,
        blur_sigma: 3.0 * s,
        exposure: -darkening * s,
        contrast: 1.0 - 0.7 * s,
        haze: 0.12 * s,
    };
    if s == 0.0 {
        return Ok((image.clone(), applied));
    }
    let mask = aperture(h);
    let plane = h * w;
    let mut d: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    blur_planes(&mut d, h, w, applied.blur_sigma, zero_fill);

    let g = Geometry::new(h);
    let (ca, sa) = (illum_angle.cos(), illum_angle.sin());
    for ch in 0..c {
        let p = &mut d[ch * plane..(ch + 1) * plane];
        for (i, v) in p.iter_mut().enumerate() {
            let (y, x) = ((i / w) as f64 - g.center, (i % w) as f64 - g.center);
            let proj = ((x * ca + y * sa) / g.radius).clamp(-1.0, 1.0);
            *v *= 1.0 - unevenness * s * (0.5 + 0.5 * proj);
            *v *= 1.0 + applied.exposure;
        }
        let inside: Vec<f64> = p.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
        let mean = inside.iter().sum::<f64>() / inside.len().max(1) as f64;
        let hc = haze_color[ch % 3];
        for v in p.iter_mut() {
            *v = mean + applied.contrast * (*v - mean);
            *v = (1.0 - applied.haze) * *v + applied.haze * hc;
        }
    }
    let out = Tensor::new(image.shape(), d.into_iter().map(|v| v as f32).collect())?;
    Ok((floor_inside(&quantize(&out), &mask), applied))
}

/// Builds one labelled sample from its per-sample random stream.
pub fn make_sample(scheme: Scheme, label: usize, size: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticSample> {
    check_size(size)?;
    let seed = rng.random::<u64>();
    let (lo, hi) = scheme.severity_band(label);
    let severity = rng.random_range(lo..=hi);
    let (clean, vessels) = render(seed, size);
    let (image, d) = degrade(&clean, severity, rng)?;
    Ok(SyntheticSample {
        image,
        label,
        scheme,
        gen_params: GenParams {
            seed,
            vessels,
            severity,
            blur_sigma: d.blur_sigma,
            exposure: d.exposure,
            contrast: d.contrast,
            haze: d.haze,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scheme: Scheme,
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

impl Dataset {
    pub fn train_examples(&self) -> Vec<Example> {
        self.train.iter().map(SyntheticSample::example).collect()
    }

    pub fn test_examples(&self) -> Vec<Example> {
        self.test.iter().map(SyntheticSample::example).collect()
    }
}

/// `n` samples split evenly over the scheme's classes, 80% of each class
/// to training. Deterministic in `seed`.
pub fn make_dataset(n: usize, scheme: Scheme, seed: u64, size: usize) -> Result<Dataset> {
    let k = scheme.num_classes();
    if n < 10 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for {} classes, got {n}",
            10 * k,
            k
        )));
    }
    check_size(size)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut index = 0u64;
    for label in 0..k {
        let count = n / k + usize::from(label < n % k);
        let n_train = (count * 4 + 2) / 5;
        for j in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            index += 1;
            let sample = make_sample(scheme, label, size, &mut rng)?;
            if j < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(Dataset { scheme, train, test })
}

const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "file\tsplit\tlabel\tscheme\tseed\tvessels\tseverity\tblur_sigma\texposure\tcontrast\thaze";

/// Writes `images/*.ppm` and a tab-separated manifest under `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (split, samples) in [("train", &dataset.train), ("test", &dataset.test)] {
        for (i, s) in samples.iter().enumerate() {
            let file = format!("images/{split}_{i:05}.ppm");
            write_ppm(&dir.join(&file), &s.image)?;
            let g = &s.gen_params;
            let _ = writeln!(
                manifest,
                "{file}\t{split}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.label,
                s.scheme.as_str(),
                g.seed,
                g.vessels,
                g.severity,
                g.blur_sigma,
                g.exposure,
                g.contrast,
                g.haze
            );
        }
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::format("manifest", "unexpected header"));
    }
    let bad = |line: usize, what: &str| Error::format("manifest", format!("line {}: bad {what}", line + 2));
    let mut scheme = None;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 11 {
            return Err(bad(ln, "field count"));
        }
        let s: Scheme = f[3].parse().map_err(|_| bad(ln, "scheme"))?;
        if *scheme.get_or_insert(s) != s {
            return Err(bad(ln, "scheme (mixed schemes)"));
        }
        let num = |i: usize, what: &str| f[i].parse::<f64>().map_err(|_| bad(ln, what));
        let label: usize = f[2].parse().map_err(|_| bad(ln, "label"))?;
        if label >= s.num_classes() {
            return Err(bad(ln, "label"));
        }
        let sample = SyntheticSample {
            image: read_ppm(&dir.join(f[0]))?,
            label,
            scheme: s,
            gen_params: GenParams {
                seed: f[4].parse().map_err(|_| bad(ln, "seed"))?,
                vessels: f[5].parse().map_err(|_| bad(ln, "vessels"))?,
                severity: num(6, "severity")?,
                blur_sigma: num(7, "blur_sigma")?,
                exposure: num(8, "exposure")?,
                contrast: num(9, "contrast")?,
                haze: num(10, "haze")?,
            },
        };
        match f[1] {
            "train" => train.push(sample),
            "test" => test.push(sample),
            _ => return Err(bad(ln, "split")),
        }
    }
    let scheme = scheme.ok_or_else(|| Error::format("manifest", "no samples"))?;
    Ok(Dataset { scheme, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_do_not_overlap() {
        for scheme in [Scheme::TwoClass, Scheme::ThreeClass] {
            for c in 0..scheme.num_classes() {
                let (lo, hi) = scheme.severity_band(c);
                assert_eq!(scheme.label_for(lo), Some(c));
                assert_eq!(scheme.label_for(hi), Some(c));
            }
        }
        assert_eq!(Scheme::TwoClass.label_for(0.3), None);
    }

    #[test]
    fn kernel_is_normalised() {
        let k = gaussian_kernel(1.3);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 2 * 4 + 1);
    }
}
