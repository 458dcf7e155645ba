use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Every parameter shape follows from these
/// fields alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Pixels per side of the square input.
    pub input_size: usize,
    pub in_channels: usize,
    /// 3x3 convolutions per encoder stage.
    pub block_conv_counts: Vec<usize>,
    /// Output channels of each encoder stage.
    pub block_channels: Vec<usize>,
    /// Channels of the encoder output; must equal the last stage width.
    pub bottleneck_channels: usize,
    /// Width the decoder's centre block compresses the bottleneck to.
    pub center_channels: usize,
    /// `[mid, out]` widths of the two 3x3 convs in each upsampling block,
    /// ordered from the lowest resolution upwards.
    pub decoder_widths: Vec<[usize; 2]>,
    /// Width of the full-resolution 1x1 fusion conv before the output conv.
    pub fusion_channels: usize,
    pub num_classes: usize,
    /// Hidden widths of the classifier MLP.
    pub classifier_widths: Vec<usize>,
}

/// Named configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 480 px, VGG-width stages.
    Paper,
    /// 64 px, encoder channels divided by eight; the two full-resolution
    /// decoder stages keep 16 channels.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset, num_classes: usize) -> Self {
        match preset {
            Preset::Paper => Self::paper(num_classes),
            Preset::Desk => Self::desk(num_classes),
        }
    }

    pub fn paper(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 480,
            in_channels: 3,
            block_conv_counts: vec![2, 2, 2, 3, 3],
            block_channels: vec![64, 128, 256, 512, 512],
            bottleneck_channels: 512,
            center_channels: 256,
            decoder_widths: vec![[512, 256], [512, 256], [256, 128], [256, 64], [128, 32]],
            fusion_channels: 32,
            num_classes,
            classifier_widths: vec![256, 128, 64],
        }
    }

    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 64,
            in_channels: 3,
            block_conv_counts: vec![2, 2, 2, 3, 3],
            block_channels: vec![8, 16, 32, 64, 64],
            bottleneck_channels: 64,
            center_channels: 32,
            decoder_widths: vec![[64, 32], [64, 32], [32, 16], [32, 16], [16, 16]],
            fusion_channels: 16,
            num_classes,
            classifier_widths: vec![32, 16, 8],
        }
    }

    pub fn stages(&self) -> usize {
        self.block_channels.len()
    }

    /// Side length of the bottleneck feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.stages()
    }

    /// Spatial side after each encoder stage's pool.
    pub fn stage_sizes(&self) -> Vec<usize> {
        (1..=self.stages()).map(|s| self.input_size >> s).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n == 0 {
            return Err(Error::Config("at least one encoder stage is required".into()));
        }
        if self.block_conv_counts.len() != n || self.decoder_widths.len() != n {
            return Err(Error::Config(format!(
                "block_conv_counts ({}), block_channels ({n}) and decoder_widths ({}) must have equal length",
                self.block_conv_counts.len(),
                self.decoder_widths.len()
            )));
        }
        if n >= usize::BITS as usize || self.input_size == 0 || self.input_size % (1 << n) != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{n}",
                self.input_size
            )));
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::Config(format!("num_classes must be 2 or 3, got {}", self.num_classes)));
        }
        if self.bottleneck_channels != self.block_channels[n - 1] {
            return Err(Error::Config(format!(
                "bottleneck_channels {} must equal the last stage width {}",
                self.bottleneck_channels,
                self.block_channels[n - 1]
            )));
        }
        let widths = self
            .block_conv_counts
            .iter()
            .chain(&self.block_channels)
            .chain(self.decoder_widths.iter().flatten())
            .chain(&self.classifier_widths)
            .chain([&self.in_channels, &self.center_channels, &self.fusion_channels]);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("all widths and counts must be positive".into()));
        }
        Ok(())
    }
}
