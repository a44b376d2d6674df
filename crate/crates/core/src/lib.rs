//! Progressive random convolution augmentation.
//!
//! One random convolution block (deformable convolution with
//! Gaussian-random-field offsets and a Gaussian-smoothed kernel, followed by
//! standardization, a random affine map and `tanh`) is sampled per
//! mini-batch and applied a random number of times. The crate also carries a
//! small LeNet-style training harness, dataset and image I/O, and a flat-array
//! entry point for foreign callers.
//!
//! All randomness flows through [`RngStream`]; equal seeds give bit-identical
//! results.

// Negated comparisons below deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod interop;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use augment::{
    apply_block, contrast_diversify, conv2d_direct, deform_conv2d, progressive_augment,
    progressive_augment_diff, progressive_augment_diff_fixed, progressive_augment_fixed,
    randconv_baseline, smooth_kernel, smoothed_randconv_baseline, standardize_channels,
    PreparedBlock, RANDCONV_POOL,
};
pub use error::{Error, Result};
pub use rng::RngStream;
pub use sampler::{
    sample_affine, sample_block, sample_grf, sample_offsets, sample_weights, smoothing_mask,
    AugmentConfig, BlockParams, Field, Kernel, OffsetField,
};
pub use tensor::{denormalize_u8, normalize_u8, Batch, Image, ImageU8};
