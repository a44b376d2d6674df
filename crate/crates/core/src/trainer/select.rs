//! Composing a training batch from original and augmented views.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    OriginalsOnly,
    AugmentedOnly,
    /// One coin flip per batch picks all originals or all augmented.
    BatchEither,
    /// Originals followed by augmented images.
    #[default]
    BothConcat,
    /// Per image: original with probability `r`, else augmented.
    InstanceFraction {
        r: f64,
    },
    /// `r ~ U(0, 1)` per batch, then as `InstanceFraction`.
    InstanceFractionRandom,
}

impl Selection {
    pub fn validate(&self) -> Result<()> {
        if let Selection::InstanceFraction { r } = self {
            if !(0.0..=1.0).contains(r) {
                return Err(invalid("r", format!("must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

pub fn select_training_views(
    originals: &Batch,
    augmented: &Batch,
    strategy: Selection,
    rng: &mut RngStream,
) -> Result<Batch> {
    strategy.validate()?;
    if originals.len() != augmented.len() || originals.image_shape() != augmented.image_shape() {
        return Err(Error::Shape(format!(
            "original batch {}x{:?} and augmented batch {}x{:?} differ",
            originals.len(),
            originals.image_shape(),
            augmented.len(),
            augmented.image_shape()
        )));
    }
    let per_image = |r: f64, rng: &mut RngStream| -> Result<Batch> {
        let images = originals
            .images()
            .iter()
            .zip(augmented.images())
            .map(|(o, a)| {
                if rng.bernoulli(r) {
                    o.clone()
                } else {
                    a.clone()
                }
            })
            .collect();
        Batch::new(images, originals.labels().map(|l| l.to_vec()))
    };
    match strategy {
        Selection::OriginalsOnly => Ok(originals.clone()),
        Selection::AugmentedOnly => Ok(augmented.clone()),
        Selection::BatchEither => Ok(if rng.bernoulli(0.5) {
            originals.clone()
        } else {
            augmented.clone()
        }),
        Selection::BothConcat => originals.concat(augmented),
        Selection::InstanceFraction { r } => per_image(r, rng),
        Selection::InstanceFractionRandom => {
            let r = rng.uniform(0.0, 1.0);
            per_image(r, rng)
        }
    }
}
