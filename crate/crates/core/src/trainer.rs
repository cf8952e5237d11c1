//! A single training run: one label mode, one hyperparameter point, one seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitIndices, DEFAULT_SPLIT_RATIOS};
use crate::error::{Error, Result};
use crate::metrics::{kl_slices, AlignmentSummary};
use crate::nn::{self, Example, MlpParams, Mode};
use crate::optim::{AdamState, EarlyStopState, PlateauState};
use crate::targets::{hard_target, soft_target, LabelDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Normalized annotation counts as the target.
    Soft,
    /// One-hot majority vote as the target.
    Hard,
}

impl LabelMode {
    pub fn target(self, counts: &[u32]) -> Result<LabelDistribution> {
        match self {
            LabelMode::Soft => soft_target(counts),
            LabelMode::Hard => hard_target(counts),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Soft => "soft",
            LabelMode::Hard => "hard",
        })
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "hard" => Ok(LabelMode::Hard),
            other => Err(Error::invalid(format!("unknown label mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    None,
    Plateau,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduler::None => "none",
            Scheduler::Plateau => "plateau",
        })
    }
}

impl FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scheduler::None),
            "plateau" => Ok(Scheduler::Plateau),
            other => Err(Error::invalid(format!("unknown scheduler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub label_mode: LabelMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub early_stopping: bool,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            label_mode: LabelMode::Soft,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            weight_decay: 0.0,
            scheduler: Scheduler::None,
            hidden_width: 256,
            dropout_rate: 0.1,
            seed: 0,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            early_stopping: true,
            early_stop_patience: EarlyStopState::DEFAULT_PATIENCE,
            early_stop_min_delta: EarlyStopState::DEFAULT_MIN_DELTA,
            plateau_patience: PlateauState::DEFAULT_PATIENCE,
            plateau_threshold: PlateauState::DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if !(self.early_stop_min_delta >= 0.0 && self.plateau_threshold >= 0.0) {
            return bad("early_stop_min_delta and plateau_threshold must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub mean_kl: f64,
}

/// Metrics after one epoch. `train.loss` is the running mean of the
/// minibatch losses (dropout active); every other number is evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: Option<SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub best_params: MlpParams,
    pub test_indices: Vec<usize>,
    /// `None` when the test split is empty.
    pub test: Option<AlignmentSummary>,
}

impl TrainResult {
    /// Writes `epoch,split,loss,accuracy,mean_kl` rows, one per split per epoch.
    pub fn write_epochs_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            epoch: usize,
            split: &'a str,
            loss: f64,
            accuracy: f64,
            mean_kl: f64,
        }
        let mut out = csv::Writer::from_writer(w);
        for rec in &self.epochs {
            let splits = [("train", Some(rec.train)), ("val", Some(rec.val)), ("test", rec.test)];
            for (name, m) in splits {
                if let Some(m) = m {
                    out.serialize(Row {
                        epoch: rec.epoch,
                        split: name,
                        loss: m.loss,
                        accuracy: m.accuracy,
                        mean_kl: m.mean_kl,
                    })?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("<epochs csv>", e))?;
        Ok(())
    }
}

/// Dataset rows promoted to `f64` with per-mode targets, shared across runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub inputs: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u32>>,
    pub soft: Vec<LabelDistribution>,
    pub hard: Vec<LabelDistribution>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl PreparedData {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let mut soft = Vec::with_capacity(dataset.len());
        let mut hard = Vec::with_capacity(dataset.len());
        for s in dataset.samples() {
            soft.push(soft_target(&s.counts)?);
            hard.push(hard_target(&s.counts)?);
        }
        Ok(Self {
            inputs: dataset
                .samples()
                .iter()
                .map(|s| s.embedding.iter().map(|&v| v as f64).collect())
                .collect(),
            counts: dataset.samples().iter().map(|s| s.counts.clone()).collect(),
            soft,
            hard,
            input_dim: dataset.embedding_dim(),
            num_classes: dataset.num_classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn targets(&self, mode: LabelMode) -> &[LabelDistribution] {
        match mode {
            LabelMode::Soft => &self.soft,
            LabelMode::Hard => &self.hard,
        }
    }

    fn examples(&self, mode: LabelMode, indices: &[usize]) -> Vec<Example<'_>> {
        let targets = self.targets(mode);
        indices
            .iter()
            .map(|&i| Example {
                input: &self.inputs[i],
                target: targets[i].probs(),
            })
            .collect()
    }

    pub fn predict(&self, params: &MlpParams, indices: &[usize]) -> Result<Vec<LabelDistribution>> {
        indices.iter().map(|&i| nn::predict(params, &self.inputs[i])).collect()
    }

    /// Loss under `mode` targets, plus accuracy and mean KL against the
    /// annotation distributions, all in evaluation mode.
    fn split_metrics(&self, params: &MlpParams, mode: LabelMode, indices: &[usize]) -> Result<SplitMetrics> {
        let targets = self.targets(mode);
        let mut loss = 0.0;
        let mut kl = 0.0;
        let mut hits = 0usize;
        for &i in indices {
            let (logits, _) = nn::forward(params, &self.inputs[i], Mode::Eval, &mut nn::NoRng)?;
            loss += nn::cross_entropy(&logits, targets[i].probs());
            let q = nn::softmax(&logits);
            kl += kl_slices(self.soft[i].probs(), q.probs())?;
            if q.argmax() == self.hard[i].argmax() {
                hits += 1;
            }
        }
        let n = indices.len() as f64;
        Ok(SplitMetrics {
            loss: loss / n,
            accuracy: hits as f64 / n,
            mean_kl: kl / n,
        })
    }
}

/// Independent random streams for one run. Initialization, shuffling and
/// dropout never share draws, so two runs with the same seed differ only
/// where their targets differ.
struct RunRngs {
    init: ChaCha8Rng,
    shuffle: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

impl RunRngs {
    fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0),
            shuffle: stream(1),
            dropout: stream(2),
        }
    }
}

/// Initial parameters a run with `seed` starts from.
pub fn initial_params(seed: u64, input_dim: usize, hidden: usize, classes: usize) -> MlpParams {
    nn::init_params_with(&mut RunRngs::new(seed).init, input_dim, hidden, classes)
}

/// Train-split order for each epoch of a run with `seed`.
pub fn epoch_orders(seed: u64, train: &[usize], epochs: usize) -> Vec<Vec<usize>> {
    let mut rng = RunRngs::new(seed).shuffle;
    let mut order = train.to_vec();
    (0..epochs)
        .map(|_| {
            order.shuffle(&mut rng);
            order.clone()
        })
        .collect()
}

pub fn train(dataset: &Dataset, splits: &SplitIndices, config: &TrainConfig) -> Result<TrainResult> {
    let data = PreparedData::new(dataset)?;
    train_prepared(&data, splits, config)
}

/// Trains on pre-promoted data. See [`train`].
pub fn train_prepared(data: &PreparedData, splits: &SplitIndices, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    splits.validate(data.len())?;
    if splits.train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if splits.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }

    let mode = config.label_mode;
    let mut rngs = RunRngs::new(config.seed);
    let mut params = nn::init_params_with(&mut rngs.init, data.input_dim, config.hidden_width, data.num_classes);
    let mut adam = AdamState::new(&params, config.learning_rate, config.weight_decay);
    let mut plateau = PlateauState::new(config.plateau_patience, config.plateau_threshold);
    let mut early = EarlyStopState::new(config.early_stop_patience, config.early_stop_min_delta);
    let train_mode = Mode::Train {
        dropout: config.dropout_rate,
    };

    let mut order = splits.train.clone();
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, MlpParams)> = None;

    for epoch in 1..=config.max_epochs {
        let lr_used = adam.lr;
        order.shuffle(&mut rngs.shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.examples(mode, chunk);
            let (loss, grads) = nn::loss_and_grad(&params, &batch, train_mode, &mut rngs.dropout)?;
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut params, &grads)?;
        }
        if !params.is_finite() {
            return Err(Error::invalid(format!("parameters diverged at epoch {epoch}")));
        }

        let mut train_metrics = data.split_metrics(&params, mode, &splits.train)?;
        train_metrics.loss = loss_sum / splits.train.len() as f64;
        let val = data.split_metrics(&params, mode, &splits.val)?;
        let test = if splits.test.is_empty() {
            None
        } else {
            Some(data.split_metrics(&params, mode, &splits.test)?)
        };
        epochs.push(EpochRecord {
            epoch,
            learning_rate: lr_used,
            train: train_metrics,
            val,
            test,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val.loss < *b) {
            best = Some((epoch, val.loss, params.clone()));
        }
        if config.scheduler == Scheduler::Plateau {
            adam.lr = plateau.update(val.loss, adam.lr);
        }
        if config.early_stopping && early.update(val.loss) {
            break;
        }
    }

    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch ran");
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate_prepared(&best_params, data, &splits.test)?)
    };
    Ok(TrainResult {
        config: config.clone(),
        stopped_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_val_loss,
        best_params,
        test_indices: splits.test.clone(),
        test,
    })
}

/// Compares evaluation-mode predictions with the annotation distributions
/// of the samples at `indices`.
pub fn evaluate(params: &MlpParams, dataset: &Dataset, indices: &[usize]) -> Result<AlignmentSummary> {
    evaluate_prepared(params, &PreparedData::new(dataset)?, indices)
}

pub fn evaluate_prepared(params: &MlpParams, data: &PreparedData, indices: &[usize]) -> Result<AlignmentSummary> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation index set"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!("evaluation index {bad} out of range")));
    }
    let preds = data.predict(params, indices)?;
    let counts: Vec<Vec<u32>> = indices.iter().map(|&i| data.counts[i].clone()).collect();
    AlignmentSummary::from_predictions(&preds, &counts)
}

/// Mean loss of `params` on `indices` under `mode` targets, evaluation mode.
pub fn mode_loss(params: &MlpParams, data: &PreparedData, mode: LabelMode, indices: &[usize]) -> Result<f64> {
    nn::mean_loss(params, &data.examples(mode, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_splits, SynthSpec};

    fn small() -> (Dataset, SplitIndices) {
        let ds = generate_synthetic(&SynthSpec {
            num_samples: 200,
            num_classes: 3,
            embedding_dim: 8,
            ..SynthSpec::default()
        })
        .unwrap();
        let s = make_splits(&ds, DEFAULT_SPLIT_RATIOS, 0).unwrap();
        (ds, s)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            hidden_width: 16,
            max_epochs: 6,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs_and_splits() {
        let (ds, s) = small();
        for cfg in [
            TrainConfig { batch_size: 0, ..quick() },
            TrainConfig { max_epochs: 0, ..quick() },
            TrainConfig { learning_rate: 0.0, ..quick() },
            TrainConfig { dropout_rate: 1.0, ..quick() },
        ] {
            assert!(train(&ds, &s, &cfg).is_err());
        }
        let no_val = SplitIndices { train: (0..200).collect(), val: vec![], test: vec![] };
        assert!(matches!(train(&ds, &no_val, &quick()), Err(Error::Empty(_))));
        let no_train = SplitIndices { train: vec![], val: (0..200).collect(), test: vec![] };
        assert!(matches!(train(&ds, &no_train, &quick()), Err(Error::Empty(_))));
    }

    #[test]
    fn records_match_stop_epoch_and_best_loss() {
        let (ds, s) = small();
        let r = train(&ds, &s, &quick()).unwrap();
        assert_eq!(r.epochs.len(), r.stopped_epoch);
        let min = r.epochs.iter().map(|e| e.val.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(r.epochs[r.best_epoch - 1].val.loss, min);
        let data = PreparedData::new(&ds).unwrap();
        let again = mode_loss(&r.best_params, &data, LabelMode::Soft, &s.val).unwrap();
        assert!((again - min).abs() < 1e-9);
    }

    #[test]
    fn stopping_epoch_matches_replayed_rule() {
        let (ds, s) = small();
        for lr in [1e-7, 1e-2] {
            let cfg = TrainConfig { learning_rate: lr, max_epochs: 20, ..quick() };
            let r = train(&ds, &s, &cfg).unwrap();
            let mut es = EarlyStopState::new(cfg.early_stop_patience, cfg.early_stop_min_delta);
            let expected = r
                .epochs
                .iter()
                .position(|e| es.update(e.val.loss))
                .map_or(cfg.max_epochs, |i| i + 1);
            assert_eq!(r.stopped_epoch, expected);
        }
        let stalled = train(&ds, &s, &TrainConfig { learning_rate: 1e-7, max_epochs: 20, ..quick() }).unwrap();
        assert_eq!(stalled.stopped_epoch, 6);
    }

    #[test]
    fn unanimous_counts_give_bit_equal_targets() {
        for counts in [vec![0, 7, 0], vec![3], vec![0, 0, 0, 1]] {
            let soft = LabelMode::Soft.target(&counts).unwrap();
            let hard = LabelMode::Hard.target(&counts).unwrap();
            assert_eq!(soft, hard);
            let logits = [0.3, -1.2, 2.0, 0.0];
            let n = counts.len();
            assert_eq!(
                nn::cross_entropy(&logits[..n], soft.probs()).to_bits(),
                nn::cross_entropy(&logits[..n], hard.probs()).to_bits()
            );
        }
    }

    #[test]
    fn epoch_orders_partition_train_split() {
        let train: Vec<usize> = (10..60).collect();
        for order in epoch_orders(3, &train, 4) {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, train);
        }
    }

    #[test]
    fn evaluate_errors() {
        let (ds, _) = small();
        let p = initial_params(0, 8, 4, 3);
        assert!(matches!(evaluate(&p, &ds, &[]), Err(Error::Empty(_))));
        let one = evaluate(&p, &ds, &[5]).unwrap();
        assert!(one.correlation().is_err());
        assert!(one.mean_kl.is_finite());
    }

    #[test]
    fn csv_has_three_rows_per_epoch() {
        let (ds, s) = small();
        let r = train(&ds, &s, &TrainConfig { max_epochs: 2, ..quick() }).unwrap();
        let mut buf = Vec::new();
        r.write_epochs_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,split,loss,accuracy,mean_kl\n"));
        assert_eq!(text.lines().count(), 1 + 3 * r.stopped_epoch);
    }

    #[test]
    fn config_parses_from_flat_json() {
        let c: TrainConfig = serde_json::from_str(r#"{"label_mode": "hard", "scheduler": "plateau", "batch_size": 8}"#).unwrap();
        assert_eq!(c.label_mode, LabelMode::Hard);
        assert_eq!(c.scheduler, Scheduler::Plateau);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.learning_rate, 1e-3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
