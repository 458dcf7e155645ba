//! Forward passes of the encoder, decoder and classifier, both on a
//! caller-supplied tape (for gradients) and as plain tensor functions.

use super::params::{FgrNetParams, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Tape handles of bound parameters, indexed like the parameter list.
/// Groups that were not bound are `None`.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }

    fn get(&self, index: usize) -> Result<Var> {
        self.vars[index].ok_or_else(|| Error::contract("forward", format!("parameter {index} is not bound")))
    }
}

/// Encoder output: the bottleneck and each stage's pre-pool feature map.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bottleneck: Var,
    pub skips: Vec<Var>,
}

/// Places the parameters of `groups` on the tape as leaves.
pub fn bind<T: Real>(tape: &mut Tape<T>, params: &FgrNetParams<T>, groups: &[ParamGroup], requires_grad: bool) -> Bound {
    let vars = params
        .specs()
        .iter()
        .zip(params.tensors())
        .map(|(s, t)| groups.contains(&s.group).then(|| tape.leaf(t.clone(), requires_grad)))
        .collect();
    Bound { vars }
}

fn conv_relu<T: Real>(tape: &mut Tape<T>, bound: &Bound, idx: usize, x: Var, pad: usize) -> Result<Var> {
    let y = tape.conv2d(x, bound.get(idx)?, bound.get(idx + 1)?, 1, pad)?;
    Ok(tape.relu(y))
}

/// Validates an image batch against the config.
pub fn check_image<T: Real>(params: &FgrNetParams<T>, image: &Tensor<T>) -> Result<()> {
    let c = params.config();
    let [_, ch, h, w] = image.dims4("encode")?;
    if ch != c.in_channels {
        return Err(Error::Dimension {
            op: "encode",
            axis: "channels",
            expected: c.in_channels,
            got: ch,
        });
    }
    for (axis, got) in [("height", h), ("width", w)] {
        if got != c.input_size {
            return Err(Error::Dimension {
                op: "encode",
                axis,
                expected: c.input_size,
                got,
            });
        }
    }
    Ok(())
}

pub fn encode_on<T: Real>(tape: &mut Tape<T>, params: &FgrNetParams<T>, bound: &Bound, image: Var) -> Result<Encoded> {
    check_image(params, tape.value(image))?;
    let mut x = image;
    let mut skips = Vec::with_capacity(params.config().stages());
    for stage in &params.layout.encoder {
        for &idx in stage {
            x = conv_relu(tape, bound, idx, x, 1)?;
        }
        skips.push(x);
        x = tape.maxpool2d(x, 2, 2)?;
    }
    Ok(Encoded { bottleneck: x, skips })
}

pub fn decode_on<T: Real>(tape: &mut Tape<T>, params: &FgrNetParams<T>, bound: &Bound, enc: &Encoded) -> Result<Var> {
    let config = params.config();
    let layout = &params.layout;
    let n = config.stages();
    if enc.skips.len() != n {
        return Err(Error::contract(
            "decode",
            format!("expected {n} skip maps, got {}", enc.skips.len()),
        ));
    }
    let [batch, _, _, _] = tape.value(enc.bottleneck).dims4("decode")?;
    let expect_bottleneck = [batch, config.bottleneck_channels, config.bottleneck_size(), config.bottleneck_size()];
    if tape.value(enc.bottleneck).shape() != expect_bottleneck {
        return Err(Error::contract(
            "decode",
            format!(
                "bottleneck shape {:?}, expected {:?}",
                tape.value(enc.bottleneck).shape(),
                expect_bottleneck
            ),
        ));
    }
    for (s, &skip) in enc.skips.iter().enumerate() {
        let side = config.input_size >> s;
        let expect = [batch, config.block_channels[s], side, side];
        if tape.value(skip).shape() != expect {
            return Err(Error::contract(
                "decode",
                format!("skip {s} has shape {:?}, expected {:?}", tape.value(skip).shape(), expect),
            ));
        }
    }

    let mut z = conv_relu(tape, bound, layout.center[0], enc.bottleneck, 1)?;
    z = conv_relu(tape, bound, layout.center[1], z, 1)?;
    for (j, convs) in layout.decoder.iter().enumerate() {
        let skip = if j == 0 { enc.bottleneck } else { enc.skips[n - j] };
        let cat = tape.concat_channels(z, skip)?;
        let up = tape.upsample_bilinear(cat, 2)?;
        z = conv_relu(tape, bound, convs[0], up, 1)?;
        z = conv_relu(tape, bound, convs[1], z, 1)?;
    }
    let cat = tape.concat_channels(z, enc.skips[0])?;
    let fused = conv_relu(tape, bound, layout.fusion, cat, 0)?;
    let out = tape.conv2d(fused, bound.get(layout.output)?, bound.get(layout.output + 1)?, 1, 0)?;
    Ok(tape.sigmoid(out))
}

pub fn classify_on<T: Real>(tape: &mut Tape<T>, params: &FgrNetParams<T>, bound: &Bound, bottleneck: Var) -> Result<Var> {
    let mut x = tape.global_avg_pool(bottleneck)?;
    let last = params.layout.classifier.len() - 1;
    for (i, &idx) in params.layout.classifier.iter().enumerate() {
        x = tape.linear(x, bound.get(idx)?, bound.get(idx + 1)?)?;
        if i < last {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Encoder + classifier only; the decoder parameters are never placed on
/// the tape.
pub fn infer_on<T: Real>(tape: &mut Tape<T>, params: &FgrNetParams<T>, image: Var, requires_grad: bool) -> Result<(Encoded, Var)> {
    let bound = bind(tape, params, &[ParamGroup::Encoder, ParamGroup::Classifier], requires_grad);
    let enc = encode_on(tape, params, &bound, image)?;
    let logits = classify_on(tape, params, &bound, enc.bottleneck)?;
    Ok((enc, logits))
}

impl<T: Real> FgrNetParams<T> {
    /// Bottleneck and pre-pool skip maps for an image batch.
    pub fn encode(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, self, &[ParamGroup::Encoder], false);
        let x = tape.constant(image.clone());
        let enc = encode_on(&mut tape, self, &bound, x)?;
        let skips = enc.skips.iter().map(|&s| tape.value(s).clone()).collect();
        Ok((tape.value(enc.bottleneck).clone(), skips))
    }

    pub fn decode(&self, bottleneck: &Tensor<T>, skips: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, self, &[ParamGroup::Decoder], false);
        let enc = Encoded {
            bottleneck: tape.constant(bottleneck.clone()),
            skips: skips.iter().map(|s| tape.constant(s.clone())).collect(),
        };
        let out = decode_on(&mut tape, self, &bound, &enc)?;
        Ok(tape.value(out).clone())
    }

    pub fn classify(&self, bottleneck: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, self, &[ParamGroup::Classifier], false);
        let b = tape.constant(bottleneck.clone());
        let out = classify_on(&mut tape, self, &bound, b)?;
        Ok(tape.value(out).clone())
    }

    /// Reconstruction and logits, as used during training.
    pub fn forward_train(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = bind(
            &mut tape,
            self,
            &[ParamGroup::Encoder, ParamGroup::Decoder, ParamGroup::Classifier],
            false,
        );
        let x = tape.constant(image.clone());
        let enc = encode_on(&mut tape, self, &bound, x)?;
        let logits = classify_on(&mut tape, self, &bound, enc.bottleneck)?;
        let recon = decode_on(&mut tape, self, &bound, &enc)?;
        Ok((tape.value(recon).clone(), tape.value(logits).clone()))
    }

    /// Logits from encoder and classifier only.
    pub fn forward_infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let (_, logits) = infer_on(&mut tape, self, x, false)?;
        Ok(tape.take_value(logits))
    }

    /// Predicted class per sample.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.forward_infer(image)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
