//! Flat-array entry point for foreign callers.

use crate::augment::progressive_augment;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::AugmentConfig;
use crate::tensor::{Batch, Image};

/// Channel count the array interface accepts.
pub const CHANNELS: usize = 3;

/// Runs [`progressive_augment`] on a contiguous N×C×H×W array with an
/// `AugmentConfig` given as JSON. Returns the augmented array in the same
/// layout and the repetition count.
pub fn augment_array(
    data: &[f32],
    shape: [usize; 4],
    config_json: &str,
    seed: u64,
) -> Result<(Vec<f32>, usize)> {
    let cfg: AugmentConfig = serde_json::from_str(config_json)?;
    augment_array_with(data, shape, &cfg, seed)
}

pub fn augment_array_with(
    data: &[f32],
    shape: [usize; 4],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(Vec<f32>, usize)> {
    let [n, c, h, w] = shape;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if c != CHANNELS {
        return Err(Error::ChannelMismatch {
            expected: CHANNELS,
            actual: c,
        });
    }
    let per_image = c * h * w;
    if data.len() != n * per_image {
        return Err(Error::Shape(format!(
            "array of {} values does not match shape {shape:?}",
            data.len()
        )));
    }
    let images = data
        .chunks_exact(per_image)
        .map(|chunk| Image::new(c, h, w, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (out, reps) = progressive_augment(&Batch::new(images, None)?, cfg, &RngStream::new(seed))?;
    let flat = out
        .into_parts()
        .0
        .into_iter()
        .flat_map(Image::into_data)
        .collect();
    Ok((flat, reps))
}
