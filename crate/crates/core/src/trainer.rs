//! The doubly stochastic training loop: minibatches sampled without
//! replacement, and per batch either a fresh random RC derivative vector
//! (EnsLoss) or the derivatives of one fixed surrogate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::derivgen::{
    fixed_loss_derivatives, generate_rc_derivatives, maybe_resample_lambda, DerivativeBatch, GenConfig, MarginBatch,
};
use crate::error::{Error, Result};
use crate::evaluation::metrics::evaluate;
use crate::losses::{builtin_loss, LossSpec};
use crate::models::{Activation, Mlp};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// How per-sample loss-derivatives are produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainMode {
    EnsLoss,
    /// A builtin loss by name.
    Fixed(String),
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::EnsLoss => f.write_str("ensloss"),
            TrainMode::Fixed(name) => write!(f, "fixed:{name}"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    /// `ensloss` or `fixed:<loss>`; the loss name must be a builtin.
    fn from_str(s: &str) -> Result<Self> {
        if s == "ensloss" {
            return Ok(TrainMode::EnsLoss);
        }
        match s.strip_prefix("fixed:") {
            Some(name) => {
                let loss = builtin_loss(name)?;
                Ok(TrainMode::Fixed(loss.name().to_string()))
            }
            None => Err(Error::Config(format!("mode must be `ensloss` or `fixed:<loss>`, got `{s}`"))),
        }
    }
}

impl Serialize for TrainMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// `lr * (1 + cos(pi * epoch / epochs)) / 2`.
    #[default]
    Cosine,
    /// Multiply by `factor` at each milestone epoch.
    Step { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    /// Learning rate for zero-based `epoch` of `epochs`.
    pub fn lr_at(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
            LrSchedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|m| **m <= epoch).count();
                base * factor.powi(passed as i32)
            }
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::Cosine => f.write_str("cosine"),
            LrSchedule::Step { milestones, factor } => {
                let ms: Vec<String> = milestones.iter().map(|m| m.to_string()).collect();
                write!(f, "step:{}@{factor}", ms.join(","))
            }
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    /// `constant`, `cosine` or `step:<m1,m2,...>@<factor>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => {
                let bad = || Error::Config(format!("invalid lr schedule `{s}`"));
                let rest = s.strip_prefix("step:").ok_or_else(bad)?;
                let (ms, factor) = rest.split_once('@').ok_or_else(bad)?;
                let milestones = ms
                    .split(',')
                    .map(|m| m.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                let factor: f64 = factor.parse().map_err(|_| bad())?;
                if !(factor > 0.0 && factor.is_finite()) {
                    return Err(bad());
                }
                Ok(LrSchedule::Step { milestones, factor })
            }
        }
    }
}

/// Stop once training accuracy has stayed at or above `threshold` for
/// `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub threshold: f64,
    pub patience: usize,
}

/// Architecture of the network to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn mlp(depth: usize, width: usize) -> Self {
        Self {
            hidden: vec![width; depth],
            activation: Activation::Relu,
        }
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub gen: GenConfig,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::EnsLoss,
            epochs: 100,
            batch_size: 128,
            lr: 0.1,
            lr_schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            dropout_rate: 0.0,
            gen: GenConfig::default(),
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let min_batch = if self.mode == TrainMode::EnsLoss { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch size must be at least {min_batch} in {} mode",
                self.mode
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(0.0..=1.0).contains(&es.threshold) {
                return Err(Error::Config("early stop needs patience >= 1 and a threshold in [0, 1]".into()));
            }
        }
        self.gen.validate()
    }
}

/// Metrics at the end of one epoch, on the full splits in eval mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// One-based.
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_auc: Option<f64>,
    pub test_auc: Option<f64>,
    /// Mean of `y f(x)` over the training split.
    pub mean_margin: f64,
    pub lambda_used: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_test_acc: f64,
    pub final_test_acc: f64,
    pub final_train_acc: f64,
    pub epochs_run: usize,
    pub updates: usize,
    /// Epoch during which parameters or margins became non-finite.
    pub diverged_at: Option<usize>,
    pub early_stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub summary: RunSummary,
    /// Not serialized, so records of repeated runs compare byte for byte.
    #[serde(skip)]
    pub wallclock_secs: f64,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.summary.diverged_at.is_some()
    }

    /// One JSON object per epoch row.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        // writing to a Vec cannot fail
        let _ = self.write_jsonl(&mut buf);
        String::from_utf8(buf).unwrap_or_default()
    }

    /// Epoch curves as CSV.
    pub fn curves_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_acc,test_acc,train_auc,test_auc,mean_margin,lambda_used,lr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_acc,
                r.test_acc,
                opt(r.train_auc),
                opt(r.test_auc),
                r.mean_margin,
                opt(r.lambda_used),
                r.lr
            ));
        }
        out
    }
}

/// Produces the loss-derivatives for each minibatch.
pub trait DerivativeSource<T: Scalar> {
    /// Smallest batch the source accepts; shorter final batches are skipped.
    fn min_batch(&self) -> usize;

    /// Called before each zero-based epoch; returns the Box-Cox exponent in force.
    fn start_epoch(&mut self, epoch: usize, rng: &mut Rng) -> Result<Option<f64>>;

    fn derivatives(&mut self, batch: &MarginBatch<T>, rng: &mut Rng) -> Result<DerivativeBatch<T>>;
}

/// Random RC derivatives.
#[derive(Debug, Clone)]
pub struct EnsLossSource {
    gen: GenConfig,
}

impl EnsLossSource {
    pub fn new(gen: GenConfig) -> Self {
        Self { gen }
    }
}

impl<T: Scalar> DerivativeSource<T> for EnsLossSource {
    fn min_batch(&self) -> usize {
        2
    }

    fn start_epoch(&mut self, epoch: usize, rng: &mut Rng) -> Result<Option<f64>> {
        self.gen.lambda = maybe_resample_lambda(&self.gen, epoch, rng)?;
        Ok(Some(self.gen.lambda.lambda()))
    }

    fn derivatives(&mut self, batch: &MarginBatch<T>, rng: &mut Rng) -> Result<DerivativeBatch<T>> {
        let d = generate_rc_derivatives(batch, &self.gen, rng)?;
        if !d.certified {
            return Err(Error::Internal("uncertified derivative batch".into()));
        }
        Ok(d)
    }
}

/// Derivatives of one fixed loss.
#[derive(Debug, Clone)]
pub struct FixedSource {
    loss: LossSpec,
    min_batch: usize,
}

impl FixedSource {
    pub fn new(loss: LossSpec) -> Self {
        Self { loss, min_batch: 1 }
    }

    /// Same derivatives, but with the EnsLoss batch policy.
    pub fn with_min_batch(loss: LossSpec, min_batch: usize) -> Self {
        Self { loss, min_batch }
    }
}

impl<T: Scalar> DerivativeSource<T> for FixedSource {
    fn min_batch(&self) -> usize {
        self.min_batch
    }

    fn start_epoch(&mut self, _epoch: usize, _rng: &mut Rng) -> Result<Option<f64>> {
        Ok(None)
    }

    fn derivatives(&mut self, batch: &MarginBatch<T>, _rng: &mut Rng) -> Result<DerivativeBatch<T>> {
        fixed_loss_derivatives(batch, &self.loss).map_err(|e| match e {
            Error::Evaluation(msg) => Error::Divergence(msg),
            other => other,
        })
    }
}

/// Independent random streams of one run.
mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const DERIVS: u64 = 4;
    pub const LAMBDA: u64 = 5;
}

/// The derivative source selected by a [`TrainMode`].
#[derive(Debug, Clone)]
pub enum ModeSource {
    EnsLoss(EnsLossSource),
    Fixed(FixedSource),
}

impl ModeSource {
    pub fn for_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(match &cfg.mode {
            TrainMode::EnsLoss => ModeSource::EnsLoss(EnsLossSource::new(cfg.gen.clone())),
            TrainMode::Fixed(name) => ModeSource::Fixed(FixedSource::new(builtin_loss(name)?)),
        })
    }
}

impl<T: Scalar> DerivativeSource<T> for ModeSource {
    fn min_batch(&self) -> usize {
        match self {
            ModeSource::EnsLoss(s) => DerivativeSource::<T>::min_batch(s),
            ModeSource::Fixed(s) => DerivativeSource::<T>::min_batch(s),
        }
    }

    fn start_epoch(&mut self, epoch: usize, rng: &mut Rng) -> Result<Option<f64>> {
        match self {
            ModeSource::EnsLoss(s) => DerivativeSource::<T>::start_epoch(s, epoch, rng),
            ModeSource::Fixed(s) => DerivativeSource::<T>::start_epoch(s, epoch, rng),
        }
    }

    fn derivatives(&mut self, batch: &MarginBatch<T>, rng: &mut Rng) -> Result<DerivativeBatch<T>> {
        match self {
            ModeSource::EnsLoss(s) => s.derivatives(batch, rng),
            ModeSource::Fixed(s) => s.derivatives(batch, rng),
        }
    }
}

/// Trains a fresh network on `data` with the derivative source chosen by
/// `cfg.mode`.
pub fn train<T: Scalar>(data: &SplitDataset<T>, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(Mlp<T>, RunRecord)> {
    let mut source = ModeSource::for_config(cfg)?;
    train_with_source(data, spec, cfg, &mut source)
}

/// [`train`] with an explicit derivative source. Everything except the
/// derivative production is shared between modes.
pub fn train_with_source<T: Scalar, S: DerivativeSource<T> + ?Sized>(
    data: &SplitDataset<T>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    source: &mut S,
) -> Result<(Mlp<T>, RunRecord)> {
    cfg.validate()?;
    if data.n_train() == 0 || data.n_test() == 0 {
        return Err(Error::EmptyRequest("dataset split with no rows"));
    }
    let has_pos = data.y_train.iter().any(|y| *y > T::zero());
    let has_neg = data.y_train.iter().any(|y| *y < T::zero());
    if !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }

    let started = Instant::now();
    let mut init_rng = Rng::with_stream(cfg.seed, stream::INIT);
    let mut shuffle_rng = Rng::with_stream(cfg.seed, stream::SHUFFLE);
    let mut dropout_rng = Rng::with_stream(cfg.seed, stream::DROPOUT);
    let mut deriv_rng = Rng::with_stream(cfg.seed, stream::DERIVS);
    let mut lambda_rng = Rng::with_stream(cfg.seed, stream::LAMBDA);

    let mut model = Mlp::<T>::new(
        spec.layer_dims(data.n_features()),
        spec.activation,
        cfg.dropout_rate,
        cfg.weight_decay,
        &mut init_rng,
    )?;

    let n = data.n_train();
    let y_train = data
        .y_train
        .as_slice()
        .ok_or_else(|| Error::Internal("non-contiguous labels".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut updates = 0usize;
    let mut diverged_at = None;
    let mut streak = 0usize;
    let mut early_stopped = false;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.lr_at(cfg.lr, epoch, cfg.epochs);
        let lambda = source.start_epoch(epoch, &mut lambda_rng)?;
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < source.min_batch() {
                continue;
            }
            match step(&mut model, data, y_train, chunk, lr, source, &mut dropout_rng, &mut deriv_rng) {
                Ok(()) => updates += 1,
                Err(Error::Divergence(msg)) => {
                    warn!("run diverged in epoch {} after {updates} updates: {msg}", epoch + 1);
                    diverged_at = Some(epoch + 1);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let train_m = evaluate(&model, data.x_train.view(), data.y_train.view())?;
        let test_m = evaluate(&model, data.x_test.view(), data.y_test.view())?;
        debug!(
            "epoch {} lr {lr:.4} train {:.4} test {:.4}",
            epoch + 1,
            train_m.accuracy,
            test_m.accuracy
        );
        rows.push(EpochRow {
            epoch: epoch + 1,
            train_acc: train_m.accuracy,
            test_acc: test_m.accuracy,
            train_auc: train_m.auc,
            test_auc: test_m.auc,
            mean_margin: train_m.mean_margin,
            lambda_used: lambda,
            lr,
        });

        if let Some(es) = cfg.early_stop {
            streak = if train_m.accuracy >= es.threshold { streak + 1 } else { 0 };
            if streak >= es.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let best_test_acc = rows.iter().map(|r| r.test_acc).fold(0.0, f64::max);
    let last = rows.last();
    let summary = RunSummary {
        best_test_acc,
        final_test_acc: last.map_or(0.0, |r| r.test_acc),
        final_train_acc: last.map_or(0.0, |r| r.train_acc),
        epochs_run: rows.len(),
        updates,
        diverged_at,
        early_stopped,
    };
    Ok((
        model,
        RunRecord {
            rows,
            summary,
            wallclock_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

/// One SGD update on the rows `idx` of the training split.
#[allow(clippy::too_many_arguments)]
pub fn step<T: Scalar, S: DerivativeSource<T> + ?Sized>(
    model: &mut Mlp<T>,
    data: &SplitDataset<T>,
    y_train: &[T],
    idx: &[usize],
    lr: f64,
    source: &mut S,
    dropout_rng: &mut Rng,
    deriv_rng: &mut Rng,
) -> Result<()> {
    let xb = data.x_train.select(Axis(0), idx);
    let yb: Vec<T> = idx.iter().map(|&i| y_train[i]).collect();
    let pass = model.forward(xb.view(), true, dropout_rng)?;
    let margins: Vec<T> = pass.scores.iter().zip(&yb).map(|(s, y)| *s * *y).collect();
    let batch = MarginBatch::new(margins, idx.to_vec())?;
    let derivs = source.derivatives(&batch, deriv_rng)?;
    let grads = model.backward_with_derivs(&pass.cache, &yb, &derivs)?;
    model.sgd_step(&grads, T::from_f64_lossy(lr))
}
