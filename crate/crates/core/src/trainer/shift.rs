//! Label-preserving pixel transforms used as stand-in target domains.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::Image;

/// Additive per-channel cast applied by [`ShiftKind::HueCast`].
pub const HUE_CAST: [f32; 3] = [0.6, -0.4, 0.2];

/// Range of the exponent used by [`ShiftKind::ContrastGamma`], log-uniform.
pub const GAMMA_RANGE: (f64, f64) = (0.3, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// `v ↦ −v`.
    Negate,
    /// Random channel order per image.
    ChannelPermute,
    /// `u ↦ u^g` on intensities `u = (v + 1) / 2`, one `g` per image.
    ContrastGamma,
    /// Fixed additive color cast, clamped to [-1, 1].
    HueCast,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] = [
        ShiftKind::Negate,
        ShiftKind::ChannelPermute,
        ShiftKind::ContrastGamma,
        ShiftKind::HueCast,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShiftKind::Negate => "negate",
            ShiftKind::ChannelPermute => "channel_permute",
            ShiftKind::ContrastGamma => "contrast_gamma",
            ShiftKind::HueCast => "hue_cast",
        }
    }
}

pub fn synth_shift(dataset: &Dataset, kind: ShiftKind, rng: &RngStream) -> Result<Dataset> {
    let images = dataset.images.map_images(|i, img| {
        let mut r = rng.split(i as u64);
        Ok(shift_image(img, kind, &mut r))
    })?;
    Dataset::new(
        format!("{}-{}", dataset.name, kind.name()),
        dataset.num_classes,
        images,
    )
}

fn shift_image(img: &Image, kind: ShiftKind, rng: &mut RngStream) -> Image {
    let mut out = img.clone();
    match kind {
        ShiftKind::Negate => out.data_mut().iter_mut().for_each(|v| *v = -*v),
        ShiftKind::ChannelPermute => {
            let order = rng.permutation(img.channels());
            for (dst, &src) in order.iter().enumerate() {
                out.channel_mut(dst).copy_from_slice(img.channel(src));
            }
        }
        ShiftKind::ContrastGamma => {
            let g = rng.uniform(GAMMA_RANGE.0.ln(), GAMMA_RANGE.1.ln()).exp();
            for v in out.data_mut() {
                let u = ((*v as f64 + 1.0) / 2.0).clamp(0.0, 1.0);
                *v = (2.0 * u.powf(g) - 1.0) as f32;
            }
        }
        ShiftKind::HueCast => {
            for c in 0..img.channels() {
                let cast = HUE_CAST[c % HUE_CAST.len()];
                for v in out.channel_mut(c) {
                    *v = (*v + cast).clamp(-1.0, 1.0);
                }
            }
        }
    }
    out
}
