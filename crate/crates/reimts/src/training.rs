//! Training loop, early stopping, evaluation and checkpoints.
//!
//! Samples are processed one at a time (no batch padding): every sample of a
//! minibatch yields its own masked-MSE loss and gradient, possibly in
//! parallel, and the batch is reduced in sample order weighting each sample by
//! its number of targets. That equals the masked MSE of the padded batch and
//! keeps results independent of the thread count.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use reimts_core::{masked_metrics, Adam, AdamConfig, Gradients, MaskedMetrics, PreparedSample, Reimts, ReimtsConfig};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, DataError, Dataset, Example};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] reimts_core::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Keep the initial rate for this many epochs, then halve it every epoch.
    HalveAfter(usize),
}

impl LrSchedule {
    /// Learning rate of 1-based `epoch`.
    pub fn rate(self, initial: f64, epoch: usize) -> f64 {
        match self {
            Self::Constant => initial,
            Self::HalveAfter(keep) => initial * 0.5f64.powi(epoch.saturating_sub(keep) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    /// Global L2 norm clip applied to each batch gradient.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 10,
            seeds: (2024..=2028).collect(),
            batch_size: 32,
            lr_schedule: LrSchedule::HalveAfter(3),
            gradient_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return bad("need 0 < patience < max_epochs");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if let Some(c) = self.gradient_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("gradient clip must be positive");
            }
        }
        Ok(())
    }
}

/// Stops after `patience` epochs without a strictly lower validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub iterations: usize,
    pub wall_secs: f64,
}

/// Self-describing model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ReimtsConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: f64,
    pub params: reimts_core::ParamStore,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Reimts> {
        Ok(Reimts::from_params(self.config.clone(), self.params.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| TrainError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(write_atomic(path, &json)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes).map_err(|e| TrainError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TrainError::Checkpoint {
                path: path.display().to_string(),
                reason: format!("unsupported format version {}", ck.format_version),
            });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl FitOutcome {
    /// Mean wall-clock seconds per optimiser step.
    pub fn secs_per_iteration(&self) -> f64 {
        let iters: usize = self.history.iter().map(|r| r.iterations).sum();
        let secs: f64 = self.history.iter().map(|r| r.wall_secs).sum();
        secs / iters.max(1) as f64
    }
}

/// Masked metrics, raw and in the `×10⁻¹` table convention (value × 10).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub mse_x10: f64,
    pub mae_x10: f64,
    pub targets: usize,
}

impl From<MaskedMetrics> for Metrics {
    fn from(m: MaskedMetrics) -> Self {
        Self {
            mse: m.mse(),
            mae: m.mae(),
            mse_x10: m.mse() * 10.0,
            mae_x10: m.mae() * 10.0,
            targets: m.count,
        }
    }
}

/// Independent random stream per purpose, so that e.g. changing the data
/// order never changes the initialisation.
pub fn stream_rng(seed: u64, purpose: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[31] = purpose;
    ChaCha8Rng::from_seed(bytes)
}

const DATA_ORDER: u8 = 2;

pub fn prepare_all(model: &Reimts, examples: &[Example]) -> Result<Vec<PreparedSample>> {
    Ok(examples
        .par_iter()
        .map(|e| model.prepare(&e.aligned, &e.query))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Metrics of `model` over prepared samples, merged in sample order.
pub fn evaluate_prepared(model: &Reimts, samples: &[PreparedSample]) -> Result<Metrics> {
    let parts = samples
        .par_iter()
        .map(|s| {
            let pred = model.forward(s)?;
            masked_metrics(&pred, s.query())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = MaskedMetrics::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total.into())
}

pub fn evaluate(model: &Reimts, examples: &[Example], split: &'static str) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    evaluate_prepared(model, &prepare_all(model, examples)?)
}

/// Count-weighted loss and gradient of one minibatch.
fn batch_gradient(model: &Reimts, batch: &[&PreparedSample]) -> Result<(f64, usize, Gradients)> {
    let parts = batch
        .par_iter()
        .map(|s| model.loss_and_grad(s).map(|(l, g)| (l, s.query().num_targets(), g)))
        .collect::<Result<Vec<_>, _>>()?;
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut grads = model.params().zeros_like();
    let mut loss = 0.0;
    for (l, count, mut g) in parts {
        let w = count as f64 / total as f64;
        loss += w * l;
        g.scale(w);
        grads.add_assign(&g);
    }
    Ok((loss, total, grads))
}

/// Trains one model from `seed`, keeping the best-validation parameters.
pub fn fit(config: &ReimtsConfig, data: &Dataset, train: &TrainConfig, seed: u64) -> Result<FitOutcome> {
    train.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut model = Reimts::new(config.clone(), seed)?;
    let train_set = prepare_all(&model, &data.train)?;
    let val_set = prepare_all(&model, &data.val)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: train.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut order_rng = stream_rng(seed, DATA_ORDER);
    let mut stopper = EarlyStopping::new(train.patience);
    let mut best = model.params().clone();
    let mut history = Vec::new();

    for epoch in 1..=train.max_epochs {
        let start = Instant::now();
        let lr = train.lr_schedule.rate(train.learning_rate, epoch);
        adam.set_lr(lr);
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut iterations = 0;
        for (b, chunk) in order.chunks(train.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&j| &train_set[j]).collect();
            let (loss, targets, mut grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, loss });
            }
            if let Some(clip) = train.gradient_clip {
                let norm = grads.l2_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam.step(model.params_mut(), &grads);
            sum += loss * targets as f64;
            count += targets;
            iterations += 1;
        }
        let val_loss = evaluate_prepared(&model, &val_set)?.mse;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: iterations,
                loss: val_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: sum / count.max(1) as f64,
            val_loss,
            iterations,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        log::debug!("seed {seed} epoch {epoch}: train {:.6} val {val_loss:.6}", sum / count.max(1) as f64);
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best.clone_from(model.params()),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    Ok(FitOutcome {
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.clone(),
            train: train.clone(),
            seed,
            epoch: stopper.best_epoch(),
            val_loss: stopper.best(),
            params: best,
        },
        history,
    })
}
