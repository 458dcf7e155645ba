//! Attribution maps (input gradient, GradCAM, occlusion) and their timing.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bind, classify_on, encode_on, FgrNetParams, ParamGroup};
use crate::tensor::{Real, Tape, Tensor, Var};

/// A classifier split into a feature network and an output network,
/// `logits = head(features(image))`.
pub trait Explainable<T: Real> {
    /// `[C, H, W]` of a single input image.
    fn input_dims(&self) -> [usize; 3];

    fn num_classes(&self) -> usize;

    fn features(&self, tape: &mut Tape<T>, image: Var) -> Result<Var>;

    fn head(&self, tape: &mut Tape<T>, features: Var) -> Result<Var>;

    fn logits_on(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let f = self.features(tape, image)?;
        self.head(tape, f)
    }

    /// Logits of a `[B, C, H, W]` batch without recording gradients.
    fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let out = self.logits_on(&mut tape, x)?;
        Ok(tape.take_value(out))
    }
}

impl<T: Real> Explainable<T> for FgrNetParams<T> {
    fn input_dims(&self) -> [usize; 3] {
        let c = self.config();
        [c.in_channels, c.input_size, c.input_size]
    }

    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    /// The encoder bottleneck.
    fn features(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let bound = bind(tape, self, &[ParamGroup::Encoder], false);
        Ok(encode_on(tape, self, &bound, image)?.bottleneck)
    }

    fn head(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let bound = bind(tape, self, &[ParamGroup::Classifier], false);
        classify_on(tape, self, &bound, features)
    }
}

/// Flatten-then-affine classifier, `logits = vec(x) W + b`; its
/// attributions have closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real = f64> {
    pub dims: [usize; 3],
    /// `[C*H*W, K]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LinearModel<T> {
    pub fn new(dims: [usize; 3], weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let f: usize = dims.iter().product();
        if weight.ndim() != 2 || weight.shape()[0] != f || bias.len() != weight.shape()[1] {
            return Err(Error::contract(
                "linear model",
                format!("weight {:?} / bias {:?} do not fit {dims:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(LinearModel { dims, weight, bias })
    }
}

impl<T: Real> Explainable<T> for LinearModel<T> {
    fn input_dims(&self) -> [usize; 3] {
        self.dims
    }

    fn num_classes(&self) -> usize {
        self.weight.shape()[1]
    }

    fn features(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let b = tape.value(image).shape()[0];
        tape.reshape(image, &[b, self.dims.iter().product()])
    }

    fn head(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        tape.linear(features, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyMethod {
    Gradient,
    GradCam,
    /// Activation-weighted GradCAM: `sum_c mean_ij(dL/dA_c) * A_c`.
    GradCamWeighted,
    Occlusion,
}

impl SaliencyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SaliencyMethod::Gradient => "gradient",
            SaliencyMethod::GradCam => "gradcam",
            SaliencyMethod::GradCamWeighted => "gradcam-weighted",
            SaliencyMethod::Occlusion => "occlusion",
        }
    }
}

impl std::str::FromStr for SaliencyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gradient" => Ok(SaliencyMethod::Gradient),
            "gradcam" => Ok(SaliencyMethod::GradCam),
            "gradcam-weighted" => Ok(SaliencyMethod::GradCamWeighted),
            "occlusion" => Ok(SaliencyMethod::Occlusion),
            other => Err(Error::InvalidArgument(format!("unknown saliency method `{other}`"))),
        }
    }
}

/// Per-pixel attribution aligned with the input image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub method: SaliencyMethod,
    pub class_index: usize,
    /// Whether negative values carry meaning.
    pub signed: bool,
}

impl SaliencyMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Text header line followed by little-endian `f64` values.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = format!(
            "{RAW_MAGIC} {} {} {} {} {}\n",
            self.method.as_str(),
            self.height,
            self.width,
            self.class_index,
            u8::from(self.signed)
        )
        .into_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::format("saliency map", e.to_string()))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("saliency map", "missing header"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format("saliency map", "bad header"))?;
        let f: Vec<&str> = header.split(' ').collect();
        if f.len() != 6 || f[0] != RAW_MAGIC {
            return Err(Error::format("saliency map", "bad header"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format("saliency map", "bad header"));
        let (height, width, class_index) = (num(f[2])?, num(f[3])?, num(f[4])?);
        let body = &bytes[nl + 1..];
        if body.len() != height * width * 8 {
            return Err(Error::format("saliency map", "payload length does not match header"));
        }
        Ok(SaliencyMap {
            values: body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            height,
            width,
            method: f[1].parse()?,
            class_index,
            signed: f[5] == "1",
        })
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_raw()).map_err(|e| Error::io(path, e))
    }
}

const RAW_MAGIC: &str = "FGRSAL1";

pub(crate) fn single_image<T: Real>(dims: [usize; 3], image: &Tensor<T>) -> Result<Tensor<T>> {
    let s = image.shape();
    let ok = match s {
        [c, h, w] => [*c, *h, *w] == dims,
        [1, c, h, w] => [*c, *h, *w] == dims,
        _ => false,
    };
    if !ok {
        return Err(Error::contract(
            "saliency",
            format!("expected one image of shape {dims:?}, got {s:?}"),
        ));
    }
    image.clone().reshape(&[1, dims[0], dims[1], dims[2]])
}

pub(crate) fn check_class<T: Real, M: Explainable<T> + ?Sized>(model: &M, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Gradient of the class logit with respect to the input pixels,
/// averaged over colour channels.
pub fn gradient_saliency<T: Real, M: Explainable<T> + ?Sized>(model: &M, image: &Tensor<T>, class: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let [c, h, w] = model.input_dims();
    let x0 = single_image(model.input_dims(), image)?;
    let mut tape = Tape::new();
    let x = tape.leaf(x0, true);
    let logits = model.logits_on(&mut tape, x)?;
    let score = tape.pick(logits, class)?;
    tape.backward(score)?;
    let g = tape.grad(x).ok_or_else(|| Error::contract("gradient saliency", "no gradient reached the image"))?;
    let plane = h * w;
    let values = (0..plane)
        .map(|i| (0..c).map(|ch| g.data()[ch * plane + i].as_f64()).sum::<f64>() / c as f64)
        .collect();
    Ok(SaliencyMap {
        values,
        height: h,
        width: w,
        method: SaliencyMethod::Gradient,
        class_index: class,
        signed: true,
    })
}

/// Feature map and the class-logit gradient with respect to it, both
/// `[1, C', h, w]`. The backward pass stops at the features.
pub fn feature_gradient<T: Real, M: Explainable<T> + ?Sized>(model: &M, image: &Tensor<T>, class: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    check_class(model, class)?;
    let x0 = single_image(model.input_dims(), image)?;
    let mut tape = Tape::new();
    let x = tape.constant(x0);
    let f = model.features(&mut tape, x)?;
    let feats = tape.value(f).clone();
    feats.dims4("gradcam")?;
    let leaf = tape.leaf(feats.clone(), true);
    let logits = model.head(&mut tape, leaf)?;
    let score = tape.pick(logits, class)?;
    tape.backward(score)?;
    let g = tape
        .take_grad(leaf)
        .unwrap_or_else(|| Tensor::zeros(feats.shape()));
    Ok((feats, g))
}

fn project(map: Vec<f64>, h: usize, w: usize, dims: [usize; 3]) -> Result<Vec<f64>> {
    let [_, oh, ow] = dims;
    if oh % h != 0 || ow % w != 0 || oh / h != ow / w {
        return Err(Error::contract(
            "gradcam",
            format!("feature map {h}x{w} does not tile the {oh}x{ow} input"),
        ));
    }
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::new(&[1, 1, h, w], map)?);
    let up = tape.upsample_bilinear(v, oh / h)?;
    Ok(tape.take_value(up).into_data())
}

/// Channel mean of the feature gradient, bilinearly resized to the input,
/// optionally passed through ReLU.
pub fn gradcam<T: Real, M: Explainable<T> + ?Sized>(model: &M, image: &Tensor<T>, class: usize, rectify: bool) -> Result<SaliencyMap> {
    let (feats, g) = feature_gradient(model, image, class)?;
    let [_, c, h, w] = feats.dims4("gradcam")?;
    let plane = h * w;
    let mean: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|ch| g.data()[ch * plane + i].as_f64()).sum::<f64>() / c as f64)
        .collect();
    finish_cam(model.input_dims(), mean, h, w, class, rectify, SaliencyMethod::GradCam)
}

/// Feature maps weighted by their spatially averaged gradients, summed
/// over channels, resized to the input, optionally rectified.
pub fn gradcam_weighted<T: Real, M: Explainable<T> + ?Sized>(model: &M, image: &Tensor<T>, class: usize, rectify: bool) -> Result<SaliencyMap> {
    let (feats, g) = feature_gradient(model, image, class)?;
    let [_, c, h, w] = feats.dims4("gradcam")?;
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for ch in 0..c {
        let gs = &g.data()[ch * plane..(ch + 1) * plane];
        let alpha = gs.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
        let a = &feats.data()[ch * plane..(ch + 1) * plane];
        for (m, &v) in cam.iter_mut().zip(a) {
            *m += alpha * v.as_f64();
        }
    }
    finish_cam(model.input_dims(), cam, h, w, class, rectify, SaliencyMethod::GradCamWeighted)
}

fn finish_cam(
    dims: [usize; 3],
    map: Vec<f64>,
    h: usize,
    w: usize,
    class: usize,
    rectify: bool,
    method: SaliencyMethod,
) -> Result<SaliencyMap> {
    let mut values = project(map, h, w, dims)?;
    if rectify {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(SaliencyMap {
        values,
        height: dims[1],
        width: dims[2],
        method,
        class_index: class,
        signed: !rectify,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    pub baseline: f64,
    /// Occluded images evaluated per forward pass.
    pub batch: usize,
}

impl OcclusionConfig {
    /// Gray baseline, patch of one eighth of the side, half-patch stride.
    pub fn for_side(side: usize) -> Self {
        let patch = (side / 8).max(1);
        OcclusionConfig {
            patch,
            stride: (patch / 2).max(1),
            baseline: 0.5,
            batch: 16,
        }
    }
}

/// Patch offsets along one axis: a regular grid, plus a final
/// edge-aligned offset when the grid stops short of the border.
pub fn patch_offsets(side: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=side - patch).step_by(stride).collect();
    if *v.last().unwrap() + patch < side {
        v.push(side - patch);
    }
    v
}

/// Class-logit drop when each patch is replaced by `baseline`, averaged
/// over all patches covering a pixel. Positive values mark regions that
/// support the class.
pub fn occlusion<T: Real, M: Explainable<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    class: usize,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let [c, h, w] = model.input_dims();
    if cfg.stride == 0 || cfg.patch == 0 {
        return Err(Error::InvalidArgument("occlusion: patch and stride must be positive".into()));
    }
    if cfg.patch > h || cfg.patch > w {
        return Err(Error::InvalidArgument(format!(
            "occlusion: patch {} exceeds image {h}x{w}",
            cfg.patch
        )));
    }
    let x = single_image(model.input_dims(), image)?;
    let k = model.num_classes();
    let base = model.logits(&x)?.data()[class].as_f64();
    let positions: Vec<(usize, usize)> = patch_offsets(h, cfg.patch, cfg.stride)
        .into_iter()
        .flat_map(|y| patch_offsets(w, cfg.patch, cfg.stride).into_iter().map(move |x| (y, x)))
        .collect();
    let plane = h * w;
    let fill = T::from_f64(cfg.baseline);
    let mut sum = vec![0.0; plane];
    let mut count = vec![0u32; plane];
    for chunk in positions.chunks(cfg.batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * c * plane);
        for &(py, px) in chunk {
            let mut img = x.data().to_vec();
            for ch in 0..c {
                for y in py..py + cfg.patch {
                    let row = ch * plane + y * w;
                    img[row + px..row + px + cfg.patch].fill(fill);
                }
            }
            data.extend(img);
        }
        let batch = Tensor::new(&[chunk.len(), c, h, w], data)?;
        let logits = model.logits(&batch)?;
        for (i, &(py, px)) in chunk.iter().enumerate() {
            let drop = base - logits.data()[i * k + class].as_f64();
            for y in py..py + cfg.patch {
                for x in px..px + cfg.patch {
                    sum[y * w + x] += drop;
                    count[y * w + x] += 1;
                }
            }
        }
    }
    Ok(SaliencyMap {
        values: sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect(),
        height: h,
        width: w,
        method: SaliencyMethod::Occlusion,
        class_index: class,
        signed: true,
    })
}

/// Dispatches to the requested method with default settings.
pub fn explain<T: Real, M: Explainable<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    class: usize,
    method: SaliencyMethod,
    rectify: bool,
    occlusion_cfg: Option<OcclusionConfig>,
) -> Result<SaliencyMap> {
    match method {
        SaliencyMethod::Gradient => gradient_saliency(model, image, class),
        SaliencyMethod::GradCam => gradcam(model, image, class, rectify),
        SaliencyMethod::GradCamWeighted => gradcam_weighted(model, image, class, rectify),
        SaliencyMethod::Occlusion => {
            let cfg = occlusion_cfg.unwrap_or_else(|| OcclusionConfig::for_side(model.input_dims()[1]));
            occlusion(model, image, class, &cfg)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchMethod {
    Prediction,
    Gradient,
    GradCam,
    Occlusion,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [
        BenchMethod::Prediction,
        BenchMethod::Gradient,
        BenchMethod::GradCam,
        BenchMethod::Occlusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Prediction => "prediction",
            BenchMethod::Gradient => "gradient",
            BenchMethod::GradCam => "gradcam",
            BenchMethod::Occlusion => "occlusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub method: String,
    pub mean_ms: f64,
    /// Sample standard deviation over the mean.
    pub coefficient_of_variation: f64,
    pub runs: usize,
    pub samples_ms: Vec<f64>,
}

/// Times each method on a single image over `runs` evaluations after
/// one untimed warm-up.
pub fn timing_benchmark<T: Real, M: Explainable<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    methods: &[BenchMethod],
    runs: usize,
) -> Result<Vec<TimingReport>> {
    if runs < 2 {
        return Err(Error::InvalidArgument(format!("timing needs at least 2 runs, got {runs}")));
    }
    let x = single_image(model.input_dims(), image)?;
    let occ = OcclusionConfig::for_side(model.input_dims()[1]);
    let run = |m: BenchMethod| -> Result<()> {
        match m {
            BenchMethod::Prediction => {
                std::hint::black_box(model.logits(&x)?);
            }
            BenchMethod::Gradient => {
                std::hint::black_box(gradient_saliency(model, &x, 0)?);
            }
            BenchMethod::GradCam => {
                std::hint::black_box(gradcam(model, &x, 0, false)?);
            }
            BenchMethod::Occlusion => {
                std::hint::black_box(occlusion(model, &x, 0, &occ)?);
            }
        }
        Ok(())
    };
    let mut reports = Vec::with_capacity(methods.len());
    for &m in methods {
        run(m)?;
        let mut samples = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t = Instant::now();
            run(m)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = samples.iter().sum::<f64>() / runs as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        reports.push(TimingReport {
            method: m.name().into(),
            mean_ms: mean,
            coefficient_of_variation: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
            runs,
            samples_ms: samples,
        });
    }
    Ok(reports)
}

/// Tab-separated `method, mean_ms, cv, runs`.
pub fn timing_table(reports: &[TimingReport]) -> String {
    let mut s = String::from("method\tmean_ms\tcv\truns\n");
    for r in reports {
        let _ = writeln!(s, "{}\t{:.3}\t{:.4}\t{}", r.method, r.mean_ms, r.coefficient_of_variation, r.runs);
    }
    s
}
