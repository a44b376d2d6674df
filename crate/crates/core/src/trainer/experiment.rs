//! One training run per ablation arm, scored in-domain and on shifted domains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    evaluate, synth_shift, train, Architecture, Augmentation, Dataset, EpochRecord, Selection,
    ShiftKind, TrainConfig, TrainOutcome,
};
use crate::augment::RANDCONV_POOL;
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::sampler::AugmentConfig;

/// Substream of the run seed used for the shifted test domains.
const SHIFT_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Originals only, no augmentation.
    #[serde(rename = "baseline")]
    Baseline,
    /// Single random convolution with `k ∈ {1, 3, 5, 7}`.
    #[serde(rename = "randconv")]
    RandConv,
    /// Plain 3×3 random convolution stacked with shared weights.
    #[serde(rename = "prog-same")]
    ProgSame,
    /// Plain 3×3 random convolutions stacked with fresh weights per layer.
    #[serde(rename = "prog-diff")]
    ProgDiff,
    /// Full random convolution blocks stacked with shared parameters.
    #[serde(rename = "full")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::RandConv,
        Ablation::ProgSame,
        Ablation::ProgDiff,
        Ablation::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::RandConv => "randconv",
            Ablation::ProgSame => "prog-same",
            Ablation::ProgDiff => "prog-diff",
            Ablation::Full => "full",
        }
    }

    /// Augmentation and selection strategy for this arm. `aug` supplies the
    /// shared hyperparameters; the progressive ablations switch off the
    /// block components.
    pub fn plan(&self, aug: &AugmentConfig, selection: Selection) -> (Augmentation, Selection) {
        let plain = AugmentConfig {
            enable_smoothing: false,
            enable_offsets: false,
            enable_contrast: false,
            ..aug.clone()
        };
        match self {
            Ablation::Baseline => (Augmentation::None, Selection::OriginalsOnly),
            Ablation::RandConv => (
                Augmentation::RandConv {
                    pool: RANDCONV_POOL.to_vec(),
                },
                selection,
            ),
            Ablation::ProgSame => (Augmentation::Progressive(plain), selection),
            Ablation::ProgDiff => (Augmentation::ProgressiveDiff(plain), selection),
            Ablation::Full => (Augmentation::Progressive(aug.clone()), selection),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid("ablation", format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub ablation: Ablation,
    pub seed: u64,
    pub best_epoch: usize,
    pub in_domain_acc: f64,
    pub shift_accs: BTreeMap<String, f64>,
    pub mean_shift_acc: Option<f64>,
}

/// Trains one ablation arm on `train_set` and scores the selected checkpoint
/// on `test_set` and, with `shift_suite`, on every [`ShiftKind`] of it.
pub fn run_experiment<F>(
    train_set: &Dataset,
    test_set: &Dataset,
    ablation: Ablation,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
    shift_suite: bool,
    on_epoch: F,
) -> Result<(ExperimentSummary, TrainOutcome)>
where
    F: FnMut(&EpochRecord),
{
    let arch = Architecture::lenet(train_set.num_classes);
    let (augmentation, selection) = ablation.plan(aug, cfg.selection);
    let cfg = TrainConfig {
        selection,
        ..cfg.clone()
    };
    let outcome = train(train_set, &arch, &augmentation, &cfg, on_epoch)?;
    let in_domain_acc = evaluate(&outcome.best, test_set)?;

    let mut shift_accs = BTreeMap::new();
    if shift_suite {
        let rng = RngStream::new(cfg.seed).split(SHIFT_STREAM);
        for (i, kind) in ShiftKind::ALL.into_iter().enumerate() {
            let shifted = synth_shift(test_set, kind, &rng.split(i as u64))?;
            shift_accs.insert(kind.name().to_string(), evaluate(&outcome.best, &shifted)?);
        }
    }
    let mean_shift_acc = (!shift_accs.is_empty())
        .then(|| shift_accs.values().sum::<f64>() / shift_accs.len() as f64);
    Ok((
        ExperimentSummary {
            ablation,
            seed: cfg.seed,
            best_epoch: outcome.best_epoch,
            in_domain_acc,
            shift_accs,
            mean_shift_acc,
        },
        outcome,
    ))
}
