//! Adam optimisation of the dual-head network with per-epoch metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curation::augment::AugmentationParams;
use crate::curation::preprocess::load_preprocessed;
use crate::error::{Error, Result};
use crate::model::{argmax, head_losses, Checkpoint, DualHeadNetwork, LossWeights, Parameters};
use crate::seed;
use crate::tensor::NumericArray;
use crate::types::{DatasetManifest, LabelSpace, Split};
use crate::{IMAGE_CHANNELS, IMAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Augment training batches on the fly (never validation batches).
    pub augment_online: bool,
    pub augmentation: AugmentationParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 21,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
            augment_online: false,
            augmentation: AugmentationParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0
            && self.loss_weights.class >= 0.0
            && self.loss_weights.threat >= 0.0;
        if !ok {
            return Err(Error::validation(format!("invalid training config: {self:?}")));
        }
        if self.augment_online {
            self.augmentation.validate()?;
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when a gradient is
/// non-finite or shapes disagree.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v)
    {
        return Err(Error::validation(
            "parameters, gradients and optimiser state have different layouts",
        ));
    }
    if let Some(bad) = grads.entries().iter().find(|e| !e.array.all_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {}",
            bad.name
        )));
    }
    let AdamConfig { beta1, beta2, epsilon } = config.adam;
    let lr = config.learning_rate;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let entries = params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .zip(state.m.entries_mut().iter_mut().zip(state.v.entries_mut()));
    for ((p, g), (m, v)) in entries {
        let values = p.array.values_mut().iter_mut().zip(g.array.values());
        let moments = m.array.values_mut().iter_mut().zip(v.array.values_mut());
        for ((theta, &grad), (mi, vi)) in values.zip(moments) {
            *mi = beta1 * *mi + (1.0 - beta1) * grad;
            *vi = beta2 * *vi + (1.0 - beta2) * grad * grad;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Preprocessed images with both targets, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub label_space: LabelSpace,
    pub ids: Vec<String>,
    /// Row-major `(n, 32, 32, 3)` pixel values.
    pixels: Vec<f64>,
    pub class_targets: Vec<usize>,
    pub threat_targets: Vec<usize>,
}

const PIXELS_PER_IMAGE: usize = IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS;

impl LabeledImages {
    pub fn new(label_space: LabelSpace) -> Self {
        Self {
            label_space,
            ids: Vec::new(),
            pixels: Vec::new(),
            class_targets: Vec::new(),
            threat_targets: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        image: &NumericArray,
        class: usize,
        threat: usize,
    ) -> Result<()> {
        if image.shape() != [IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS] {
            return Err(Error::validation(format!(
                "expected a 32×32×3 image, got {:?}",
                image.shape()
            )));
        }
        if class >= self.label_space.len() || threat >= 3 {
            return Err(Error::validation("target index out of range"));
        }
        self.ids.push(id.into());
        self.pixels.extend_from_slice(image.values());
        self.class_targets.push(class);
        self.threat_targets.push(threat);
        Ok(())
    }

    /// Loads and preprocesses the records of `split` (or all records when
    /// `None`). Every record must carry a threat level.
    pub fn from_manifest(manifest: &DatasetManifest, split: Option<Split>) -> Result<Self> {
        let records = match split {
            Some(s) => manifest.split_records(s)?,
            None => manifest.records.iter().collect(),
        };
        let unannotated: Vec<String> = records
            .iter()
            .filter(|r| r.threat.is_none())
            .map(|r| r.id.clone())
            .collect();
        if !unannotated.is_empty() {
            return Err(Error::Unannotatable {
                count: unannotated.len(),
                ids: unannotated,
            });
        }
        let images: Vec<NumericArray> = records
            .par_iter()
            .map(|r| load_preprocessed(&r.path))
            .collect::<Result<_>>()?;
        let mut out = Self::new(manifest.label_space.clone());
        for (r, img) in records.iter().zip(&images) {
            let class = manifest.label_space.index_of(&r.category).ok_or_else(|| {
                Error::validation(format!("record {:?} has unknown category", r.id))
            })?;
            let threat = r.threat.expect("checked above").index();
            out.push(r.id.clone(), img, class, threat)?;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image(&self, i: usize) -> NumericArray {
        NumericArray::new(
            vec![IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS],
            self.pixels[i * PIXELS_PER_IMAGE..(i + 1) * PIXELS_PER_IMAGE].to_vec(),
        )
        .expect("fixed image size")
    }

    /// Stacks the given images into a `(B, 32, 32, 3)` batch.
    pub fn batch(&self, indices: &[usize]) -> NumericArray {
        let mut values = Vec::with_capacity(indices.len() * PIXELS_PER_IMAGE);
        for &i in indices {
            values.extend_from_slice(&self.pixels[i * PIXELS_PER_IMAGE..(i + 1) * PIXELS_PER_IMAGE]);
        }
        NumericArray::new(
            vec![indices.len(), IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS],
            values,
        )
        .expect("fixed image size")
    }
}

/// Per-epoch losses and accuracies of both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_class_acc: f64,
    pub val_class_acc: f64,
    pub train_threat_acc: f64,
    pub val_threat_acc: f64,
}

impl EpochMetrics {
    pub fn train_mean_acc(&self) -> f64 {
        0.5 * (self.train_class_acc + self.train_threat_acc)
    }

    pub fn val_mean_acc(&self) -> f64 {
        0.5 * (self.val_class_acc + self.val_threat_acc)
    }
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,train_loss,val_loss,train_class_acc,val_class_acc,train_threat_acc,val_threat_acc";

pub fn metrics_to_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.train_class_acc,
            m.val_class_acc,
            m.train_threat_acc,
            m.val_threat_acc
        ));
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let bad = |message: String| Error::Format {
        what: "metrics csv",
        message,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_CSV_HEADER) {
        return Err(bad("missing or unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", i + 1)))
            };
            Ok(EpochMetrics {
                epoch: f[0]
                    .trim()
                    .parse()
                    .map_err(|e| bad(format!("row {}: {e}", i + 1)))?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                train_class_acc: num(f[3])?,
                val_class_acc: num(f[4])?,
                train_threat_acc: num(f[5])?,
                val_threat_acc: num(f[6])?,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    fs::write(path, metrics_to_csv(history)).map_err(|e| Error::io(path, e))
}

/// Counts from one optimisation step, taken on the forward pass before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub size: usize,
    pub class_correct: usize,
    pub threat_correct: usize,
    /// Weighted loss summed over the batch rows.
    pub loss_sum: f64,
}

/// Loss and accuracy of a network over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub loss: f64,
    pub class_acc: f64,
    pub threat_acc: f64,
    pub class_predictions: Vec<usize>,
    pub threat_predictions: Vec<usize>,
}

/// Scores `data` in batches of `batch_size` without updating anything.
pub fn score(
    net: &DualHeadNetwork,
    data: &LabeledImages,
    batch_size: usize,
    weights: LossWeights,
) -> Result<Score> {
    if data.is_empty() {
        return Err(Error::validation("cannot score an empty dataset"));
    }
    let mut loss_sum = 0.0;
    let mut class_predictions = Vec::with_capacity(data.len());
    let mut threat_predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let out = net.predict(&data.batch(chunk))?;
        let ct: Vec<usize> = chunk.iter().map(|&i| data.class_targets[i]).collect();
        let tt: Vec<usize> = chunk.iter().map(|&i| data.threat_targets[i]).collect();
        loss_sum += head_losses(&out, &ct, &tt)?.weighted(weights) * chunk.len() as f64;
        class_predictions.extend(out.class_predictions());
        threat_predictions.extend(out.threat_predictions());
    }
    let n = data.len() as f64;
    let correct = |pred: &[usize], truth: &[usize]| {
        pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64
    };
    Ok(Score {
        loss: loss_sum / n,
        class_acc: correct(&class_predictions, &data.class_targets) / n,
        threat_acc: correct(&threat_predictions, &data.threat_targets) / n,
        class_predictions,
        threat_predictions,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network after the final epoch.
    pub net: DualHeadNetwork,
    pub history: Vec<EpochMetrics>,
    pub batches: Vec<BatchRecord>,
    /// Epoch (1-based) with the lowest validation loss.
    pub best_epoch: Option<usize>,
    pub best_params: Option<Parameters>,
    pub checkpoint: Option<PathBuf>,
}

/// Trains for `config.epochs` epochs of `⌈N / batch_size⌉` Adam steps,
/// reshuffling the batch order every epoch from `config.seed`. The final
/// partial batch is kept. Validation runs after every epoch; the parameters
/// with the lowest validation loss are written to `checkpoint_path` when given.
pub fn train(
    net: DualHeadNetwork,
    train_data: &LabeledImages,
    val_data: &LabeledImages,
    config: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::validation("training and validation sets must be non-empty"));
    }
    for data in [train_data, val_data] {
        if data.label_space != net.config.label_space {
            return Err(Error::validation(format!(
                "data label space {} does not match network label space {}",
                data.label_space, net.config.label_space
            )));
        }
    }

    let mut net = net;
    let mut state = AdamState::new(&net.params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut batches = Vec::new();
    let mut best: Option<(usize, f64, Parameters)> = None;
    let n = train_data.len();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[epoch as u64]));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut class_correct = 0;
        let mut threat_correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = if config.augment_online {
                augmented_batch(train_data, chunk, config, epoch)?
            } else {
                train_data.batch(chunk)
            };
            let ct: Vec<usize> = chunk.iter().map(|&i| train_data.class_targets[i]).collect();
            let tt: Vec<usize> = chunk.iter().map(|&i| train_data.threat_targets[i]).collect();

            let out = net.forward(&batch)?;
            let loss = head_losses(&out, &ct, &tt)?.weighted(config.loss_weights);
            let record = BatchRecord {
                epoch,
                size: chunk.len(),
                class_correct: count_correct(&out.class_probs, &ct),
                threat_correct: count_correct(&out.threat_probs, &tt),
                loss_sum: loss * chunk.len() as f64,
            };
            epoch_loss += record.loss_sum;
            class_correct += record.class_correct;
            threat_correct += record.threat_correct;
            batches.push(record);

            let mut grads = net.backward(&out, &ct, &tt, config.loss_weights)?;
            for (i, g) in grads.entries_mut().iter_mut().enumerate() {
                if !net.is_trainable(i) {
                    g.array.values_mut().fill(0.0);
                }
            }
            adam_step(&mut net.params, &grads, &mut state, config)?;
        }

        let val = score(&net, val_data, config.batch_size, config.loss_weights)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: epoch_loss / n as f64,
            val_loss: val.loss,
            train_class_acc: class_correct as f64 / n as f64,
            val_class_acc: val.class_acc,
            train_threat_acc: threat_correct as f64 / n as f64,
            val_threat_acc: val.threat_acc,
        };
        if !metrics.train_loss.is_finite() || !metrics.val_loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(_, l, _)| metrics.val_loss < *l) {
            best = Some((epoch, metrics.val_loss, net.params.clone()));
            if let Some(path) = checkpoint_path {
                Checkpoint::from_network(&net, Some(epoch)).save(path)?;
            }
        }
        history.push(metrics);
    }

    let (best_epoch, best_params) = match best {
        Some((e, _, p)) => (Some(e), Some(p)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        net,
        history,
        batches,
        best_epoch,
        best_params,
        checkpoint: checkpoint_path.filter(|_| best_epoch.is_some()).map(Path::to_path_buf),
    })
}

fn count_correct(probs: &NumericArray, targets: &[usize]) -> usize {
    targets
        .iter()
        .enumerate()
        .filter(|(i, &t)| argmax(probs.row(*i)) == t)
        .count()
}

fn augmented_batch(
    data: &LabeledImages,
    indices: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<NumericArray> {
    let images: Vec<NumericArray> = indices
        .par_iter()
        .map(|&i| {
            let draw = seed::derive(config.seed ^ config.augmentation.seed, &[epoch as u64, i as u64]);
            config.augmentation.draw(draw).apply(&data.image(i))
        })
        .collect::<Result<_>>()?;
    NumericArray::stack(&images)
}
