//! Seeded mini-batch training with early stopping, and evaluation.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::data::{
    apply_augment, image_to_tensor, normalize, resize_tensor, sample_augment, smote_oversample, split, DatasetRecord,
    DxType, Lesion, NormStats, Partition, SmoteConfig, SmoteTarget, SplitAssignment, DEFAULT_NEIGHBORS,
    DEFAULT_RATIOS,
};
use crate::error::{invalid, Error, Result};
use crate::io::hex;
use crate::layers::apply_bn_updates;
use crate::loss::{class_weights, instance_weight, weighted_cross_entropy, ClassWeights, InstanceWeightTable};
use crate::metrics::{confusion_named, report, ConfusionMatrix, MetricsReport};
use crate::model::{build_model, Model, ModelSpec};
use crate::ops::Mode;
use crate::optim::SgdMomentum;
use crate::tensor::Tensor;

/// Validation quantity that drives early stopping and best-model selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
    ValMacroF1,
}

impl Monitor {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Monitor::ValMacroF1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Monitor::ValLoss => "val_loss",
            Monitor::ValMacroF1 => "val_macro_f1",
        }
    }
}

impl FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_loss" => Ok(Monitor::ValLoss),
            "val_macro_f1" => Ok(Monitor::ValMacroF1),
            _ => Err(invalid(format!("unknown monitor {s:?}, expected val_loss or val_macro_f1"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFlags {
    pub class_weighting: bool,
    pub instance_weighting: bool,
    pub smote: bool,
    pub stratified_split: bool,
    pub augment: bool,
}

impl Default for TrainFlags {
    fn default() -> Self {
        TrainFlags { class_weighting: true, instance_weighting: true, smote: true, stratified_split: false, augment: true }
    }
}

/// Learning-rate schedule; training uses a constant rate unless configured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    /// Rate for the zero-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, gamma } => base * gamma.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// `None` disables early stopping; otherwise `0 < patience < epochs`.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    pub flags: TrainFlags,
    pub monitor: Monitor,
    pub instance_weights: InstanceWeightTable,
    pub smote_target: SmoteTarget,
    pub smote_neighbors: usize,
    /// Divide the weighted loss by the summed weights rather than the batch size.
    pub normalize_loss: bool,
    pub split_ratios: [f64; 3],
    pub schedule: LrSchedule,
}

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_PATIENCE: usize = 10;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            early_stop_patience: Some(DEFAULT_PATIENCE),
            seed: 0,
            flags: TrainFlags::default(),
            monitor: Monitor::ValLoss,
            instance_weights: InstanceWeightTable::default(),
            smote_target: SmoteTarget::Full,
            smote_neighbors: DEFAULT_NEIGHBORS,
            normalize_loss: true,
            split_ratios: DEFAULT_RATIOS,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.batch_size < 2 {
            return Err(invalid(format!("batch size {} is below 2, which batchnorm needs", self.batch_size)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(invalid(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if let Some(p) = self.early_stop_patience {
            if p == 0 || p >= self.epochs {
                return Err(invalid(format!("patience {p} must satisfy 0 < patience < epochs ({})", self.epochs)));
            }
        }
        if self.smote_neighbors == 0 {
            return Err(invalid("smote needs at least one neighbor"));
        }
        if let SmoteTarget::Ratio(r) = self.smote_target {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid(format!("smote target ratio {r} must lie in (0, 1]")));
            }
        }
        if let LrSchedule::Step { every, gamma } = self.schedule {
            if every == 0 || !(gamma.is_finite() && gamma > 0.0) {
                return Err(invalid(format!("step schedule needs every > 0 and gamma > 0, got {every}, {gamma}")));
            }
        }
        self.instance_weights.validate()
    }
}

/// Patience-based stopping rule over a monitored value.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: Option<usize>,
    higher_is_better: bool,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>, higher_is_better: bool) -> Self {
        EarlyStopping { patience, higher_is_better, best: None, best_epoch: 0, since_best: 0 }
    }

    /// Records the value for a one-based `epoch`. Ties and NaN do not count as
    /// improvements.
    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = match self.best {
            None => !value.is_nan(),
            Some(best) if self.higher_is_better => value > best,
            Some(best) => value < best,
        };
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let stop = self.patience.is_some_and(|p| self.since_best >= p);
        StopDecision { improved, stop }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    /// Optimization steps taken.
    pub batches: usize,
    pub train_loss: f64,
    /// Accuracy of the train-mode forward passes, augmentation included.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub monitor: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub monitor: Monitor,
    pub epochs: Vec<EpochRecord>,
    /// One-based epoch whose parameters were kept; 0 before training.
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub stopped_early: bool,
    pub train_size: usize,
    pub synthetic_count: usize,
    pub val_size: usize,
    pub class_weights: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Result of [`train`]: the best-epoch checkpoint and the split it used.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub split: SplitAssignment,
}

/// `[3, S, S]` tensor in [0, 1] at the model's input size.
pub fn load_tensor(record: &DatasetRecord, size: usize) -> Result<Tensor<f32>> {
    resize_tensor(&image_to_tensor(&record.image), size)
}

/// Preprocesses records for a model: resize, then standardize.
pub fn prepare(records: &[&DatasetRecord], size: usize, norm: &NormStats) -> Result<Vec<Tensor<f32>>> {
    records.par_iter().map(|r| load_tensor(r, size).map(|t| normalize(&t, norm))).collect()
}

/// Splits a shuffled order into batches of `batch_size`. A trailing batch of
/// one is merged into its predecessor since batchnorm cannot train on it.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("at least one batch remains").extend(last);
    }
    batches
}

/// Per-sample loss weight: class weight times instance weight.
pub fn sample_weight(label: usize, dx_type: Option<DxType>, classes: &ClassWeights, table: &InstanceWeightTable) -> f32 {
    (classes.get(label) * instance_weight(dx_type, table)) as f32
}

/// One optimization step on a batch. Returns the pre-step loss and logits;
/// a non-finite loss leaves the model untouched.
pub fn train_step(
    model: &mut Model<f32>,
    optimizer: &mut SgdMomentum<f32>,
    batch: Tensor<f32>,
    labels: &[usize],
    weights: &[f32],
    normalize_loss: bool,
) -> Result<(f32, Tensor<f32>)> {
    let mut tape = Tape::new();
    let x = tape.constant(batch);
    let mut updates = Vec::new();
    let logits = model.forward(&mut tape, x, Mode::Train, &mut updates)?;
    let loss = tape.weighted_cross_entropy(logits, labels, weights, normalize_loss)?;
    let value = tape.value(loss).item();
    let logits_value = tape.value(logits).clone();
    if !value.is_finite() {
        return Ok((value, logits_value));
    }
    tape.backward(loss, &mut model.store)?;
    apply_bn_updates(&mut model.store, &updates);
    optimizer.step(&mut model.store);
    Ok((value, logits_value))
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Eval-mode logits `[N, K]` in batches of `batch_size`.
pub fn predict_logits(model: &Model<f32>, tensors: &[Tensor<f32>], batch_size: usize) -> Result<Tensor<f32>> {
    let k = model.spec.num_classes;
    let mut out = Vec::with_capacity(tensors.len() * k);
    for chunk in tensors.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        out.extend_from_slice(model.predict(&Tensor::stack(&refs)?)?.data());
    }
    Tensor::new([tensors.len(), k], out)
}

/// Row-wise softmax in double precision.
pub fn softmax_rows(logits: &Tensor<f32>) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// Eval-mode predictions on preprocessed tensors, scored against `labels`.
pub fn evaluate_model(
    model: &Model<f32>,
    tensors: &[Tensor<f32>],
    labels: &[usize],
    class_names: Vec<String>,
) -> Result<Evaluation> {
    if tensors.len() != labels.len() {
        return Err(invalid(format!("{} tensors but {} labels", tensors.len(), labels.len())));
    }
    let logits = predict_logits(model, tensors, DEFAULT_BATCH_SIZE)?;
    let k = model.spec.num_classes;
    let predictions: Vec<usize> = logits.data().chunks(k).map(argmax).collect();
    let scores = softmax_rows(&logits);
    let confusion = confusion_named(&predictions, labels, class_names)?;
    let report = report(&confusion, Some((&scores, labels)))?;
    Ok(Evaluation { report, confusion, predictions, scores })
}

/// Evaluates a checkpoint on raw records using its stored normalization.
pub fn evaluate(checkpoint: &Checkpoint, records: &[&DatasetRecord]) -> Result<Evaluation> {
    let model = checkpoint.to_model()?;
    let tensors = prepare(records, checkpoint.spec.image_size, &checkpoint.norm)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
    evaluate_model(&model, &tensors, &labels, checkpoint.class_names.clone())
}

fn check_compatible(spec: &ModelSpec, records: &[DatasetRecord]) -> Result<()> {
    if spec.num_classes != Lesion::COUNT {
        return Err(Error::Data(format!(
            "model predicts {} classes but the dataset has {}",
            spec.num_classes,
            Lesion::COUNT
        )));
    }
    if spec.in_channels != 3 {
        return Err(Error::Data(format!("model expects {} input channels but images are RGB", spec.in_channels)));
    }
    if let Some(r) = records.iter().find(|r| r.image.width() == 0 || r.image.height() == 0) {
        return Err(Error::Data(format!("image {} is empty", r.image_id)));
    }
    Ok(())
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    hex(&h.finalize())
}

const SMOTE_SEED_SALT: u64 = 0x5307_e5a1;

/// Trains `spec` on `records` and returns the parameters of the best epoch
/// by the configured monitor.
///
/// The split, model initialization, SMOTE, shuffling and augmentation all
/// derive from `config.seed`, so equal inputs give bitwise-equal results.
pub fn train(spec: &ModelSpec, records: &[DatasetRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    check_compatible(spec, records)?;
    let k = spec.num_classes;
    let size = spec.image_size;

    let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
    let assignment = split(&labels, config.seed, config.split_ratios, config.flags.stratified_split)?;
    let train_idx = assignment.indices(Partition::Train);
    let val_idx = assignment.indices(Partition::Val);
    if train_idx.len() < 2 {
        return Err(Error::Data(format!("training split has {} samples, need at least 2", train_idx.len())));
    }
    if val_idx.is_empty() {
        return Err(Error::Data("validation split is empty; early stopping and model selection need it".into()));
    }

    let train_records: Vec<&DatasetRecord> = train_idx.iter().map(|&i| &records[i]).collect();
    let val_records: Vec<&DatasetRecord> = val_idx.iter().map(|&i| &records[i]).collect();
    let raw_train: Vec<Tensor<f32>> = train_records.par_iter().map(|r| load_tensor(r, size)).collect::<Result<_>>()?;
    let norm = NormStats::from_tensors(&raw_train)?;
    let mut train_x: Vec<Tensor<f32>> = raw_train.iter().map(|t| normalize(t, &norm)).collect();
    drop(raw_train);
    let val_x = prepare(&val_records, size, &norm)?;

    let mut train_y: Vec<usize> = train_records.iter().map(|r| r.label.index()).collect();
    let mut train_dx: Vec<Option<DxType>> = train_records.iter().map(|r| r.dx_type).collect();
    let val_y: Vec<usize> = val_records.iter().map(|r| r.label.index()).collect();

    let mut counts = vec![0usize; k];
    for &y in &train_y {
        counts[y] += 1;
    }
    let mut warnings = Vec::new();
    if config.flags.smote {
        if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::Data(format!(
                "SMOTE needs at least 2 training samples per class, {} has {n}",
                Lesion::from_index(c).map_or_else(|| c.to_string(), |l| l.code().to_string())
            )));
        }
    }
    let cw = if config.flags.class_weighting {
        class_weights(&counts).map_err(|e| Error::Data(e.to_string()))?
    } else {
        ClassWeights::uniform(k)
    };
    let table = if config.flags.instance_weighting { config.instance_weights } else { InstanceWeightTable::flat() };

    let original = train_x.len();
    if config.flags.smote {
        let smote_cfg =
            SmoteConfig { k: config.smote_neighbors, seed: config.seed ^ SMOTE_SEED_SALT, target: config.smote_target };
        let out = smote_oversample(&train_x, &train_y, &train_dx, k, &smote_cfg)?;
        warnings.extend(out.warnings);
        for s in out.synthetic {
            train_x.push(s.tensor);
            train_y.push(s.label);
            train_dx.push(s.dx_type);
        }
    }
    let train_w: Vec<f32> = train_y.iter().zip(&train_dx).map(|(&y, &d)| sample_weight(y, d, &cw, &table)).collect();
    let val_w: Vec<f32> =
        val_records.iter().map(|r| sample_weight(r.label.index(), r.dx_type, &cw, &table)).collect();

    let mut model_spec = spec.clone();
    model_spec.seed = config.seed;
    let mut model = build_model::<f32>(&model_spec)?;
    let mut optimizer = SgdMomentum::new(config.lr, config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.monitor.higher_is_better());
    let mut best_store = model.store.clone();
    let mut history = History {
        monitor: config.monitor,
        train_size: original,
        synthetic_count: train_x.len() - original,
        val_size: val_x.len(),
        class_weights: cw.weights.clone(),
        ..History::default()
    };

    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=config.epochs {
        let lr = config.schedule.lr_at(config.lr, epoch - 1);
        optimizer.lr = lr;
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let batches = make_batches(&order, config.batch_size);
        for (b, batch) in batches.iter().enumerate() {
            let batch_seed = rng.next_u64();
            let items: Vec<Tensor<f32>> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    if config.flags.augment {
                        let mut r = ChaCha8Rng::seed_from_u64(batch_seed);
                        r.set_stream(pos as u64);
                        apply_augment(&train_x[i], &sample_augment(&mut r, size))
                    } else {
                        train_x[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Tensor<f32>> = items.iter().collect();
            let x = Tensor::stack(&refs)?;
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let w: Vec<f32> = batch.iter().map(|&i| train_w[i]).collect();
            let (loss, logits) = train_step(&mut model, &mut optimizer, x, &y, &w, config.normalize_loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b + 1 });
            }
            loss_sum += loss as f64 * batch.len() as f64;
            correct += logits.data().chunks(k).zip(&y).filter(|(row, &t)| argmax(row) == t).count();
        }

        let val_logits = predict_logits(&model, &val_x, config.batch_size)?;
        let val_loss = weighted_cross_entropy(&val_logits, &val_y, &val_w, config.normalize_loss)? as f64;
        let val_pred: Vec<usize> = val_logits.data().chunks(k).map(argmax).collect();
        let val_report = report(&confusion_named(&val_pred, &val_y, Lesion::names())?, None)?;
        let monitor = match config.monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValMacroF1 => val_report.macro_avg.f1,
        };
        let decision = stopper.observe(epoch, monitor);
        if decision.improved {
            best_store = model.store.clone();
        }
        let record = EpochRecord {
            epoch,
            lr,
            batches: batches.len(),
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val_accuracy: val_report.accuracy,
            val_macro_f1: val_report.macro_avg.f1,
            monitor,
            improved: decision.improved,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3} macro-F1 {:.3}{}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy,
            record.val_macro_f1,
            if decision.improved { " *" } else { "" }
        );
        history.epochs.push(record);
        if decision.stop {
            history.stopped_early = epoch < config.epochs;
            break;
        }
    }
    model.store = best_store;
    history.best_epoch = stopper.best_epoch();
    history.best_monitor = stopper.best_value().unwrap_or(f64::NAN);
    history.warnings = warnings;

    let checkpoint =
        Checkpoint::from_model(&model, Lesion::names(), norm, history, Some(config.clone()), rng_digest(&rng));
    Ok(TrainOutcome { checkpoint, split: assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_trace() {
        let mut es = EarlyStopping::new(Some(2), false);
        let decisions: Vec<_> = [1.0, 0.9, 0.95, 0.92].iter().enumerate().map(|(i, &v)| es.observe(i + 1, v)).collect();
        assert!(decisions[..3].iter().all(|d| !d.stop));
        assert!(decisions[3].stop);
        assert_eq!(es.best_epoch(), 2);
        assert_eq!(es.best_value(), Some(0.9));
    }

    #[test]
    fn higher_is_better_monitor() {
        let mut es = EarlyStopping::new(Some(1), true);
        assert!(es.observe(1, 0.5).improved);
        assert!(es.observe(2, 0.7).improved);
        assert!(es.observe(3, 0.6).stop);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..130).collect();
        let batches = make_batches(&order[..129], 64);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 65]);
        let batches = make_batches(&order, 64);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 64, 2]);
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig { early_stop_patience: Some(100), ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let one_epoch = TrainConfig { epochs: 1, early_stop_patience: None, ..TrainConfig::default() };
        one_epoch.validate().unwrap();
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 5, "early_stop_patience": 2}"#).unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.batch_size, DEFAULT_BATCH_SIZE);
        assert_eq!(c.flags, TrainFlags::default());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step { every: 10, gamma: 0.5 };
        assert_eq!(s.lr_at(1.0, 9), 1.0);
        assert_eq!(s.lr_at(1.0, 10), 0.5);
        assert_eq!(LrSchedule::Constant.lr_at(0.3, 99), 0.3);
    }
}
