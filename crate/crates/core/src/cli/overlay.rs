//! Saliency overlays on a grayscale copy of the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::SaliencyMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Positive values green, negative values red.
    Signed,
    /// Absolute value on a single-hue ramp.
    Magnitude,
}

impl Polarity {
    /// Signed maps render signed, rectified or unsigned ones by magnitude.
    pub fn for_map(map: &SaliencyMap) -> Self {
        if map.signed {
            Polarity::Signed
        } else {
            Polarity::Magnitude
        }
    }
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(Polarity::Signed),
            "magnitude" => Ok(Polarity::Magnitude),
            other => Err(Error::InvalidArgument(format!("unknown polarity `{other}`"))),
        }
    }
}

const GREEN: [f32; 3] = [0.0, 1.0, 0.0];
const RED: [f32; 3] = [1.0, 0.0, 0.0];
const HEAT: [f32; 3] = [1.0, 0.55, 0.0];

/// Blends `map`, scaled by its largest absolute value, over the luminance
/// of a `[3, H, W]` image. Zero-valued pixels stay pure gray.
pub fn render_overlay(image: &Tensor, map: &SaliencyMap, polarity: Polarity) -> Result<Tensor> {
    let (h, w) = match *image.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        _ => {
            return Err(Error::contract(
                "overlay",
                format!("expected a [3, H, W] image, got {:?}", image.shape()),
            ))
        }
    };
    if (map.height, map.width) != (h, w) || map.values.len() != h * w {
        return Err(Error::contract(
            "overlay",
            format!("map {}x{} does not match image {h}x{w}", map.height, map.width),
        ));
    }
    let scale = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let plane = h * w;
    let src = image.data();
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let gray = 0.299 * src[i] + 0.587 * src[plane + i] + 0.114 * src[2 * plane + i];
        let v = if scale > 0.0 { map.values[i] / scale } else { 0.0 };
        let (a, hue) = match polarity {
            Polarity::Signed if v >= 0.0 => (v as f32, GREEN),
            Polarity::Signed => (-v as f32, RED),
            Polarity::Magnitude => (v.abs() as f32, HEAT),
        };
        for ch in 0..3 {
            out[ch * plane + i] = ((1.0 - a) * gray + a * hue[ch]).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[3, h, w], out)
}
