use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Which sub-network a parameter belongs to. The decoder group includes the
/// centre block, the fusion conv and the output conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    /// Inputs feeding each output unit; zero for biases.
    pub fan_in: usize,
}

/// Index of each layer's weight in the flat parameter list; the bias
/// always follows its weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub encoder: Vec<Vec<usize>>,
    pub center: [usize; 2],
    pub decoder: Vec<[usize; 2]>,
    pub fusion: usize,
    pub output: usize,
    pub classifier: Vec<usize>,
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn conv(&mut self, name: String, group: ParamGroup, cin: usize, cout: usize, k: usize) -> usize {
        let idx = self.specs.len();
        self.specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            group,
            fan_in: cin * k * k,
        });
        self.specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            group,
            fan_in: 0,
        });
        idx
    }

    fn linear(&mut self, name: String, fin: usize, fout: usize) -> usize {
        let idx = self.specs.len();
        self.specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![fin, fout],
            group: ParamGroup::Classifier,
            fan_in: fin,
        });
        self.specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![fout],
            group: ParamGroup::Classifier,
            fan_in: 0,
        });
        idx
    }
}

/// Parameter specs in canonical order, plus the layer layout.
pub(crate) fn param_specs(config: &ModelConfig) -> (Vec<ParamSpec>, Layout) {
    use ParamGroup::*;
    let mut b = SpecBuilder { specs: Vec::new() };
    let n = config.stages();

    let mut encoder = Vec::with_capacity(n);
    let mut cin = config.in_channels;
    for (s, (&count, &cout)) in config.block_conv_counts.iter().zip(&config.block_channels).enumerate() {
        let mut convs = Vec::with_capacity(count);
        for i in 0..count {
            convs.push(b.conv(format!("encoder.stage{s}.conv{i}"), Encoder, cin, cout, 3));
            cin = cout;
        }
        encoder.push(convs);
    }

    let cb = config.bottleneck_channels;
    let center = [
        b.conv("decoder.center.conv0".into(), Decoder, cb, cb, 3),
        b.conv("decoder.center.conv1".into(), Decoder, cb, config.center_channels, 3),
    ];

    let mut decoder = Vec::with_capacity(n);
    let mut stream = config.center_channels;
    for (j, &[mid, out]) in config.decoder_widths.iter().enumerate() {
        let skip = if j == 0 { cb } else { config.block_channels[n - j] };
        decoder.push([
            b.conv(format!("decoder.block{j}.conv0"), Decoder, stream + skip, mid, 3),
            b.conv(format!("decoder.block{j}.conv1"), Decoder, mid, out, 3),
        ]);
        stream = out;
    }
    let fusion = b.conv(
        "decoder.fusion".into(),
        Decoder,
        stream + config.block_channels[0],
        config.fusion_channels,
        1,
    );
    let output = b.conv("decoder.output".into(), Decoder, config.fusion_channels, config.in_channels, 1);

    let mut classifier = Vec::new();
    let mut fin = cb;
    for (i, &w) in config.classifier_widths.iter().chain([&config.num_classes]).enumerate() {
        classifier.push(b.linear(format!("classifier.fc{i}"), fin, w));
        fin = w;
    }

    (
        b.specs,
        Layout {
            encoder,
            center,
            decoder,
            fusion,
            output,
            classifier,
        },
    )
}

/// Learned weights of encoder, decoder and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FgrNetParams<T: Real = f32> {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    pub(crate) layout: Layout,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> FgrNetParams<T> {
    /// Fan-in scaled uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// and zero biases, drawn deterministically from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = param_specs(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                if s.fan_in == 0 {
                    return Tensor::zeros(&s.shape);
                }
                let bound = (6.0 / s.fan_in as f64).sqrt();
                let n = s.shape.iter().product();
                let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
                Tensor::new(&s.shape, data).expect("spec shape")
            })
            .collect();
        Ok(FgrNetParams {
            config: config.clone(),
            specs,
            layout,
            tensors,
        })
    }

    /// Assembles parameters from tensors in canonical order, checking every
    /// shape against the config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = param_specs(config);
        if specs.len() != tensors.len() {
            return Err(Error::Dimension {
                op: "params",
                axis: "tensor count",
                expected: specs.len(),
                got: tensors.len(),
            });
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(Error::contract(
                    "params",
                    format!("{}: expected shape {:?}, got {:?}", s.name, s.shape, t.shape()),
                ));
            }
        }
        Ok(FgrNetParams {
            config: config.clone(),
            specs,
            layout,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> FgrNetParams<U> {
        FgrNetParams {
            config: self.config.clone(),
            specs: self.specs.clone(),
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Parameter count as a pure function of the config.
pub fn param_count(config: &ModelConfig) -> usize {
    param_specs(config)
        .0
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let c = ModelConfig::desk(2);
        let a = FgrNetParams::<f32>::init(&c, 7).unwrap();
        let b = FgrNetParams::<f32>::init(&c, 7).unwrap();
        assert_eq!(a, b);
        let d = FgrNetParams::<f32>::init(&c, 8).unwrap();
        assert_ne!(a, d);
        assert_eq!(a.param_count(), d.param_count());
        assert_eq!(a.param_count(), param_count(&c));
    }

    #[test]
    fn full_scale_widths_match_layer_layout() {
        let (specs, _) = param_specs(&ModelConfig::paper(3));
        let shape = |n: &str| specs.iter().find(|s| s.name == n).unwrap().shape.clone();
        assert_eq!(shape("encoder.stage0.conv0.weight"), vec![64, 3, 3, 3]);
        assert_eq!(shape("encoder.stage4.conv2.weight"), vec![512, 512, 3, 3]);
        assert_eq!(shape("decoder.center.conv1.weight"), vec![256, 512, 3, 3]);
        // 256 compressed + 512 bottleneck = 768, twice
        assert_eq!(shape("decoder.block0.conv0.weight"), vec![512, 768, 3, 3]);
        assert_eq!(shape("decoder.block1.conv0.weight"), vec![512, 768, 3, 3]);
        // 32 + 64 = 96 into the 1x1 fusion conv
        assert_eq!(shape("decoder.fusion.weight"), vec![32, 96, 1, 1]);
        assert_eq!(shape("decoder.output.weight"), vec![3, 32, 1, 1]);
        assert_eq!(shape("classifier.fc0.weight"), vec![512, 256]);
        assert_eq!(shape("classifier.fc3.weight"), vec![64, 3]);
    }

    #[test]
    fn full_scale_is_larger_than_desk() {
        assert!(param_count(&ModelConfig::paper(2)) > param_count(&ModelConfig::desk(2)));
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let c = ModelConfig::desk(2);
        let p = FgrNetParams::<f32>::init(&c, 1).unwrap();
        let mut ts = p.tensors().to_vec();
        assert!(FgrNetParams::from_tensors(&c, ts.clone()).is_ok());
        ts[0] = Tensor::zeros(&[1]);
        assert!(FgrNetParams::from_tensors(&c, ts).is_err());
    }
}
