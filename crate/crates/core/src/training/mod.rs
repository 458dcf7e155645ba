//! Joint optimisation of reconstruction and classification.

mod adam;
mod augment;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use augment::{augment, Augmentation};

use crate::error::{Error, Result};
use crate::losses::{self, RecLoss};
use crate::metrics::MetricsReport;
use crate::model::{bind, classify_on, decode_on, encode_on, FgrNetParams, ParamGroup};
use crate::tensor::{Real, Tape, Tensor, Var};

/// A labelled image of shape `[C, S, S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the reconstruction term.
    pub alpha: f64,
    pub rec_loss: RecLoss,
    /// Multiplies the learning rate by this factor every
    /// `lr_decay_every` epochs. Off when absent.
    pub lr_decay_gamma: Option<f64>,
    pub lr_decay_every: usize,
    /// Random flip/rotation of every training image as it is batched.
    pub augment: bool,
    /// Oversample minority classes before training.
    pub balance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 15,
            alpha: 0.5,
            rec_loss: RecLoss::Mse,
            lr_decay_gamma: None,
            lr_decay_every: 10,
            augment: true,
            balance: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if let Some(g) = self.lr_decay_gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("lr_decay_gamma must lie in (0, 1], got {g}")));
            }
        }
        losses::check_alpha(self.alpha).map_err(|e| Error::Config(e.to_string()))
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_gamma {
            Some(g) => self.learning_rate * g.powi(((epoch.max(1) - 1) / self.lr_decay_every) as i32),
            None => self.learning_rate,
        }
    }
}

/// Loss terms averaged over a set of batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub cls: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_accuracy: f64,
    pub val_metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Training-set losses of the untrained model, without augmentation.
    pub initial: LossBreakdown,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Tab-separated `epoch, L_rec, L_c, L, val_accuracy`; epoch 0 is the
    /// untrained model.
    pub fn to_table(&self) -> String {
        let mut s = String::from("epoch\tL_rec\tL_c\tL\tval_accuracy\n");
        let _ = writeln!(
            s,
            "0\t{:.6}\t{:.6}\t{:.6}\t",
            self.initial.rec, self.initial.cls, self.initial.total
        );
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}",
                e.epoch, e.loss.rec, e.loss.cls, e.loss.total, e.val_accuracy
            );
        }
        s
    }
}

/// Handles of the three loss terms of one batch on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub rec: Var,
    pub cls: Var,
    pub total: Var,
    pub recon: Var,
    pub logits: Var,
}

/// Records the full training forward pass and the combined objective
/// `alpha * L_rec + (1 - alpha) * L_c` on `tape`.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    params: &FgrNetParams<T>,
    bound: &crate::model::Bound,
    images: &Tensor<T>,
    labels: &[usize],
    alpha: f64,
    rec_loss: RecLoss,
) -> Result<BatchLoss> {
    losses::check_alpha(alpha)?;
    let x = tape.constant(images.clone());
    let enc = encode_on(tape, params, bound, x)?;
    let logits = classify_on(tape, params, bound, enc.bottleneck)?;
    let recon = decode_on(tape, params, bound, &enc)?;
    let rec = match rec_loss {
        RecLoss::Mse => tape.mse(recon, x)?,
        RecLoss::Mae => tape.mae(recon, x)?,
        RecLoss::Ssim => tape.ssim_loss(recon, x)?,
    };
    let cls = tape.cross_entropy(logits, labels)?;
    let total = tape.axpby(rec, alpha, cls, 1.0 - alpha)?;
    Ok(BatchLoss {
        rec,
        cls,
        total,
        recon,
        logits,
    })
}

const ALL_GROUPS: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::Decoder, ParamGroup::Classifier];

/// Gradients of the combined loss on one batch with respect to every
/// parameter, in canonical order, plus the loss terms.
pub fn batch_gradients<T: Real>(
    params: &FgrNetParams<T>,
    images: &Tensor<T>,
    labels: &[usize],
    alpha: f64,
    rec_loss: RecLoss,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, &ALL_GROUPS, true);
    let l = batch_loss(&mut tape, params, &bound, images, labels, alpha, rec_loss)?;
    let breakdown = LossBreakdown {
        rec: tape.value(l.rec).item().as_f64(),
        cls: tape.value(l.cls).item().as_f64(),
        total: tape.value(l.total).item().as_f64(),
    };
    if !breakdown.total.is_finite() {
        return Ok((breakdown, Vec::new()));
    }
    tape.backward(l.total)?;
    let grads = params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            bound
                .var(i)
                .and_then(|v| tape.take_grad(v))
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok((breakdown, grads))
}

fn stack_images(examples: &[&Example]) -> Result<Tensor> {
    let images: Vec<&Tensor> = examples.iter().map(|e| &e.image).collect();
    Tensor::stack(&images)
}

/// Loss terms over `examples` in order, without augmentation or updates.
pub fn evaluate_loss(
    params: &FgrNetParams,
    examples: &[Example],
    alpha: f64,
    rec_loss: RecLoss,
    batch_size: usize,
) -> Result<LossBreakdown> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let mut acc = LossBreakdown {
        rec: 0.0,
        cls: 0.0,
        total: 0.0,
    };
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let images = stack_images(&refs)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, params, &ALL_GROUPS, false);
        let l = batch_loss(&mut tape, params, &bound, &images, &labels, alpha, rec_loss)?;
        let w = chunk.len() as f64;
        acc.rec += w * tape.value(l.rec).item().as_f64();
        acc.cls += w * tape.value(l.cls).item().as_f64();
        acc.total += w * tape.value(l.total).item().as_f64();
    }
    let n = examples.len() as f64;
    Ok(LossBreakdown {
        rec: acc.rec / n,
        cls: acc.cls / n,
        total: acc.total / n,
    })
}

/// Predicted class of every example, batched through the inference path.
pub fn predict_all(params: &FgrNetParams, examples: &[Example], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        out.extend(params.predict(&stack_images(&refs)?)?);
    }
    Ok(out)
}

pub fn evaluate(params: &FgrNetParams, examples: &[Example], batch_size: usize) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let preds = predict_all(params, examples, batch_size)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    MetricsReport::from_predictions(&preds, &labels, params.config().num_classes)
}

/// Mean per-image SSIM between each example and its reconstruction.
pub fn mean_reconstruction_ssim(params: &FgrNetParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for e in examples {
        let x = stack_images(&[e])?;
        let (recon, _) = params.forward_train(&x)?;
        total += losses::ssim(&recon, &x)?;
    }
    Ok(total / examples.len() as f64)
}

/// Oversamples every class up to the size of the largest one with
/// augmented copies of randomly chosen members. Originals are kept in
/// order at the front.
pub fn balance_dataset<R: Rng + ?Sized>(examples: &[Example], num_classes: usize, rng: &mut R) -> Result<Vec<Example>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in examples.iter().enumerate() {
        if e.label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {num_classes} classes",
                e.label
            )));
        }
        by_class[e.label].push(i);
    }
    if let Some(c) = by_class.iter().position(|m| m.is_empty()) {
        return Err(Error::InvalidArgument(format!("class {c} has no samples")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = examples.to_vec();
    for members in &by_class {
        for _ in members.len()..target {
            let src = &examples[members[rng.random_range(0..members.len())]];
            out.push(Example {
                image: augment(&src.image, rng)?,
                label: src.label,
            });
        }
    }
    Ok(out)
}

/// Trains `params` in place on `train_set`, scoring `val_set` after every
/// epoch. `on_epoch` sees each record as soon as it is complete.
pub fn train(
    params: &mut FgrNetParams,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let k = params.config().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = if cfg.balance {
        balance_dataset(train_set, k, &mut rng)?
    } else {
        train_set.to_vec()
    };
    let initial = evaluate_loss(params, train_set, cfg.alpha, cfg.rec_loss, cfg.batch_size)?;
    let names: Vec<String> = params.specs().iter().map(|s| s.name.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut state = AdamState::new(params.tensors());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let adam = AdamConfig {
            lr: cfg.lr_at(epoch),
            ..AdamConfig::default()
        };
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown {
            rec: 0.0,
            cls: 0.0,
            total: 0.0,
        };
        let mut steps = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(idx.len());
            for &i in idx {
                images.push(if cfg.augment {
                    augment(&data[i].image, &mut rng)?
                } else {
                    data[i].image.clone()
                });
            }
            let refs: Vec<&Tensor> = images.iter().collect();
            let batch = Tensor::stack(&refs)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data[i].label).collect();
            let (l, grads) = batch_gradients(params, &batch, &labels, cfg.alpha, cfg.rec_loss)?;
            if !l.total.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            adam_step(params.tensors_mut(), &grads, &names, &mut state, &adam)?;
            sum.rec += l.rec;
            sum.cls += l.cls;
            sum.total += l.total;
            steps += 1;
        }
        let n = steps as f64;
        let val_metrics = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(params, val_set, cfg.batch_size.max(16))?)
        };
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                rec: sum.rec / n,
                cls: sum.cls / n,
                total: sum.total / n,
            },
            val_accuracy: val_metrics.as_ref().map_or(f64::NAN, |m| m.accuracy),
            val_metrics,
        };
        on_epoch(&record);
        epochs.push(record);
    }
    Ok(History { initial, epochs })
}
