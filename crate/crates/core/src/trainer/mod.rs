//! Training a small classifier on original and augmented views.

pub mod data;
pub mod experiment;
pub mod net;
pub mod optim;
pub mod select;
pub mod shift;

use serde::{Deserialize, Serialize};

use crate::augment::{progressive_augment, progressive_augment_diff, randconv_baseline};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::sampler::AugmentConfig;
use crate::tensor::Batch;

pub use data::Dataset;
pub use experiment::{run_experiment, Ablation, ExperimentSummary};
pub use net::{cross_entropy, Architecture, ClassifierState, Matrix, Real};
pub use optim::{sgd_momentum_step, CosineSchedule};
pub use select::{select_training_views, Selection};
pub use shift::{synth_shift, ShiftKind};

/// Smoothing window of the logged loss moving average, in steps.
pub const LOSS_EMA_WINDOW: usize = 50;

const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub selection: Selection,
    /// Only the first `train_samples` training images are used.
    pub train_samples: usize,
    /// Trailing fraction of the training subset held out for model selection.
    pub val_fraction: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            momentum: 0.9,
            lr0: 0.01,
            epochs: 20,
            selection: Selection::BothConcat,
            train_samples: 10_000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(invalid("lr0", format!("must be > 0, got {}", self.lr0)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(invalid(
                "val_fraction",
                format!("must lie in [0, 1), got {}", self.val_fraction),
            ));
        }
        if self.train_samples == 0 {
            return Err(invalid("train_samples", "must be >= 1"));
        }
        self.selection.validate()
    }
}

/// How augmented views are produced for each mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    None,
    RandConv { pool: Vec<usize> },
    Progressive(AugmentConfig),
    ProgressiveDiff(AugmentConfig),
}

impl Augmentation {
    /// Augmented copy of `batch` and the repetition count used (1 for the
    /// single-layer baseline).
    pub fn apply(&self, batch: &Batch, rng: &RngStream) -> Result<Option<(Batch, usize)>> {
        Ok(match self {
            Augmentation::None => None,
            Augmentation::RandConv { pool } => Some((randconv_baseline(batch, rng, pool)?, 1)),
            Augmentation::Progressive(cfg) => Some(progressive_augment(batch, cfg, rng)?),
            Augmentation::ProgressiveDiff(cfg) => Some(progressive_augment_diff(batch, cfg, rng)?),
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_ema: f64,
    pub in_domain_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best held-out accuracy.
    pub best: ClassifierState<f32>,
    pub best_epoch: usize,
    pub last: ClassifierState<f32>,
    pub log: Vec<EpochRecord>,
}

/// Top-1 accuracy.
pub fn evaluate<T: Real>(state: &ClassifierState<T>, dataset: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let images = dataset.images.images();
    for (chunk, labels) in images
        .chunks(EVAL_CHUNK)
        .zip(dataset.labels().chunks(EVAL_CHUNK))
    {
        let predicted = state.predict(chunk)?;
        correct += predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Trains on the first `cfg.train_samples` images of `dataset`, holding out
/// the trailing `cfg.val_fraction` for checkpoint selection. Each mini-batch
/// gets a freshly sampled augmentation; views are combined by
/// `cfg.selection` and the network takes one momentum-SGD step under a cosine
/// schedule. `on_epoch` sees every log record as it is produced.
pub fn train<F>(
    dataset: &Dataset,
    arch: &Architecture,
    augmentation: &Augmentation,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    let subset = dataset.take(cfg.train_samples)?;
    let (train_set, val_set) = if cfg.val_fraction > 0.0 {
        let (t, v) = subset.split_tail(cfg.val_fraction)?;
        (t, Some(v))
    } else {
        (subset, None)
    };

    let root = RngStream::new(cfg.seed);
    let mut state = ClassifierState::<f32>::init(arch.clone(), &root.split(0))?;
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = CosineSchedule {
        lr0: cfg.lr0,
        total_steps: steps_per_epoch * cfg.epochs,
    };

    let ema_alpha = 2.0 / (LOSS_EMA_WINDOW as f64 + 1.0);
    let mut ema: Option<f64> = None;
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ClassifierState<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        let order = root.split(1).split(epoch as u64).permutation(n);
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr0;
        for chunk in order.chunks(cfg.batch_size) {
            let originals = train_set.images.select(chunk)?;
            let augmented = augmentation.apply(&originals, &root.split(2).split(step as u64))?;
            let views = match augmented {
                Some((aug, _)) => select_training_views(
                    &originals,
                    &aug,
                    cfg.selection,
                    &mut root.split(3).split(step as u64),
                )?,
                None => originals,
            };
            let (loss, grad) = state.backward(&views)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            lr = schedule.lr(step);
            sgd_momentum_step(&mut state, &grad, lr, cfg.momentum);
            if !state.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            loss_sum += loss;
            ema = Some(match ema {
                None => loss,
                Some(e) => e + ema_alpha * (loss - e),
            });
            step += 1;
        }

        let acc = match &val_set {
            Some(v) => evaluate(&state, v)?,
            None => evaluate(&state, &train_set)?,
        };
        let record = EpochRecord {
            epoch,
            step,
            lr,
            loss: loss_sum / steps_per_epoch as f64,
            loss_ema: ema.unwrap_or(f64::NAN),
            in_domain_acc: acc,
        };
        on_epoch(&record);
        log.push(record);
        if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
            best = Some((acc, epoch, state.clone()));
        }
    }

    let (_, best_epoch, best_state) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_state,
        best_epoch,
        last: state,
        log,
    })
}
