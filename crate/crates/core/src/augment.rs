//! Applying random convolution blocks to images.
//!
//! A block is a deformable convolution followed by per-channel
//! standardization, a random affine map and `tanh`. Progressive augmentation
//! applies one sampled block `L` times.

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::sampler::{
    sample_block, smoothing_mask, AugmentConfig, BlockParams, Kernel, OffsetField,
};
use crate::tensor::{Batch, Image};

/// Kernel sizes the single-layer baseline draws from.
pub const RANDCONV_POOL: [usize; 4] = [1, 3, 5, 7];

/// Zero-padded "same" convolution by direct summation.
pub fn conv2d_direct(img: &Image, weights: &Kernel) -> Result<Image> {
    check_channels(img, weights)?;
    let (_, h, w) = img.shape();
    let k = weights.size;
    let r = (k / 2) as isize;
    let mut out = Image::zeros(weights.out_channels, h, w);
    for o in 0..weights.out_channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for i in 0..weights.in_channels {
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - r;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += weights.get(o, i, ky, kx) as f64
                                * img.get(i, sy as usize, sx as usize) as f64;
                        }
                    }
                }
                out.set(o, y, x, acc as f32);
            }
        }
    }
    Ok(out)
}

fn check_channels(img: &Image, weights: &Kernel) -> Result<()> {
    if img.channels() != weights.in_channels {
        return Err(Error::ChannelMismatch {
            expected: weights.in_channels,
            actual: img.channels(),
        });
    }
    Ok(())
}

/// Precomputed bilinear taps for one offset field: for every kernel tap and
/// output pixel, four (plane index, weight) pairs. Out-of-bounds corners carry
/// zero weight.
#[derive(Debug, Clone)]
pub struct DeformSampler {
    kernel_size: usize,
    height: usize,
    width: usize,
    index: Vec<[u32; 4]>,
    weight: Vec<[f32; 4]>,
    /// No offsets: every tap reads an integer grid position.
    integral: bool,
}

impl DeformSampler {
    pub fn new(
        kernel_size: usize,
        height: usize,
        width: usize,
        offsets: Option<&OffsetField>,
    ) -> Result<Self> {
        if let Some(f) = offsets {
            if f.kernel_size != kernel_size || f.height != height || f.width != width {
                return Err(Error::Shape(format!(
                    "offsets of shape ({}, {}, {}) do not match kernel {kernel_size} on {height}x{width}",
                    f.planes(),
                    f.height,
                    f.width
                )));
            }
        }
        let Some(offsets) = offsets else {
            return Ok(Self {
                kernel_size,
                height,
                width,
                index: Vec::new(),
                weight: Vec::new(),
                integral: true,
            });
        };
        let taps = kernel_size * kernel_size;
        let r = (kernel_size / 2) as f64;
        let plane = height * width;
        let mut index = Vec::with_capacity(taps * plane);
        let mut weight = Vec::with_capacity(taps * plane);
        for tap in 0..taps {
            let ti = (tap / kernel_size) as f64 - r;
            let tj = (tap % kernel_size) as f64 - r;
            let (dy_plane, dx_plane) = (offsets.plane(tap), offsets.plane(taps + tap));
            for y in 0..height {
                for x in 0..width {
                    let p = y * width + x;
                    let dy = dy_plane[p] as f64;
                    let dx = dx_plane[p] as f64;
                    let (idx, wts) =
                        bilinear_taps(y as f64 + ti + dy, x as f64 + tj + dx, height, width);
                    index.push(idx);
                    weight.push(wts);
                }
            }
        }
        Ok(Self {
            kernel_size,
            height,
            width,
            index,
            weight,
            integral: false,
        })
    }

    /// Samples every channel of `img` at kernel tap `tap`:
    /// `out[c * H * W + p]`. `out` must hold `channels * H * W` values.
    fn gather_tap(&self, img: &Image, tap: usize, out: &mut [f32]) {
        let plane = self.height * self.width;
        if self.integral {
            self.gather_shifted(img, tap, out);
            return;
        }
        let src = img.data();
        let idx = &self.index[tap * plane..(tap + 1) * plane];
        let wts = &self.weight[tap * plane..(tap + 1) * plane];
        // Offsets are shared across channels, so each tap table entry is
        // loaded once and applied to every channel.
        for (p, (i, wt)) in idx.iter().zip(wts).enumerate() {
            for c in 0..img.channels() {
                let base = c * plane;
                // SAFETY: `new` only stores indices below `height * width`,
                // and `src` holds `channels` planes of that size.
                unsafe {
                    *out.get_unchecked_mut(base + p) = wt[0]
                        * src.get_unchecked(base + i[0] as usize)
                        + wt[1] * src.get_unchecked(base + i[1] as usize)
                        + wt[2] * src.get_unchecked(base + i[2] as usize)
                        + wt[3] * src.get_unchecked(base + i[3] as usize);
                }
            }
        }
    }

    /// Zero-offset gather: the input shifted by the tap's grid displacement,
    /// copied row by row with zeros outside the image.
    fn gather_shifted(&self, img: &Image, tap: usize, out: &mut [f32]) {
        let k = self.kernel_size;
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let r = (k / 2) as isize;
        let dy = (tap / k) as isize - r;
        let dx = (tap % k) as isize - r;
        let x_lo = (-dx).clamp(0, w as isize) as usize;
        let x_hi = (w as isize - dx).clamp(x_lo as isize, w as isize) as usize;
        for c in 0..img.channels() {
            let src = img.channel(c);
            let dst = &mut out[c * plane..(c + 1) * plane];
            for y in 0..h {
                let row = &mut dst[y * w..(y + 1) * w];
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    row.fill(0.0);
                    continue;
                }
                row[..x_lo].fill(0.0);
                row[x_hi..].fill(0.0);
                let s0 = sy as usize * w + (x_lo as isize + dx) as usize;
                row[x_lo..x_hi].copy_from_slice(&src[s0..s0 + x_hi - x_lo]);
            }
        }
    }
}

fn bilinear_taps(y: f64, x: f64, h: usize, w: usize) -> ([u32; 4], [f32; 4]) {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let corners = [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x0 + 1.0, (1.0 - fy) * fx),
        (y0 + 1.0, x0, fy * (1.0 - fx)),
        (y0 + 1.0, x0 + 1.0, fy * fx),
    ];
    let mut idx = [0u32; 4];
    let mut wts = [0f32; 4];
    for (n, &(cy, cx, wt)) in corners.iter().enumerate() {
        if wt != 0.0 && cy >= 0.0 && cx >= 0.0 && cy < h as f64 && cx < w as f64 {
            idx[n] = (cy as usize * w + cx as usize) as u32;
            wts[n] = wt as f32;
        }
    }
    (idx, wts)
}

/// Largest window radius folded into a [`Stencil`]. Offsets beyond about
/// `MAX_STENCIL_RADIUS - k / 2` pixels fall back to per-tap gathering.
const MAX_STENCIL_RADIUS: usize = 3;

/// A deformable convolution folded into per-pixel weights over the
/// `(2R+1)²` window around each output pixel. Pixels are indexed with the
/// row stride of the zero-padded input, so every window position is one
/// contiguous multiply-add against a shifted view of the padded image.
/// Built once per block and reused for every image and repetition.
#[derive(Debug, Clone)]
struct Stencil {
    radius: usize,
    /// Length of one weight plane: `(H - 1) * (W + 2R) + W`.
    span: usize,
    /// `[((o * C_in + c) * window + j) * span + q]`, `q = y * (W + 2R) + x`.
    weights: Vec<f32>,
}

impl Stencil {
    fn new(sampler: &DeformSampler, kernel: &Kernel) -> Option<Self> {
        let (h, w) = (sampler.height, sampler.width);
        let plane = h * w;
        let taps = kernel.taps();
        let mut radius = 0usize;
        for (n, (idx, wts)) in sampler.index.iter().zip(&sampler.weight).enumerate() {
            let p = n % plane;
            let (y, x) = (p / w, p % w);
            for (&i, &wt) in idx.iter().zip(wts) {
                if wt != 0.0 {
                    let (sy, sx) = (i as usize / w, i as usize % w);
                    radius = radius.max(sy.abs_diff(y)).max(sx.abs_diff(x));
                }
            }
        }
        if radius > MAX_STENCIL_RADIUS {
            return None;
        }
        let side = 2 * radius + 1;
        let window = side * side;
        let pw = w + 2 * radius;
        let span = (h - 1) * pw + w;
        let (cout, cin) = (kernel.out_channels, kernel.in_channels);
        let mut weights = vec![0.0f32; cout * cin * window * span];
        for tap in 0..taps {
            for p in 0..plane {
                let (y, x) = (p / w, p % w);
                let n = tap * plane + p;
                for (&i, &wt) in sampler.index[n].iter().zip(&sampler.weight[n]) {
                    if wt == 0.0 {
                        continue;
                    }
                    let (sy, sx) = (i as usize / w, i as usize % w);
                    let j = (sy + radius - y) * side + (sx + radius - x);
                    let q = y * pw + x;
                    for o in 0..cout {
                        for c in 0..cin {
                            let wv = kernel.data[(o * cin + c) * taps + tap];
                            weights[((o * cin + c) * window + j) * span + q] += wv * wt;
                        }
                    }
                }
            }
        }
        Some(Self {
            radius,
            span,
            weights,
        })
    }

    fn apply(&self, img: &Image, cout: usize, scratch: &mut Vec<f32>) -> Image {
        let (cin, h, w) = img.shape();
        let r = self.radius;
        let (side, pw, span) = (2 * r + 1, w + 2 * r, self.span);
        let pplane = (h + 2 * r) * pw;
        scratch.clear();
        scratch.resize(cin * pplane + span, 0.0);
        let (padded, acc) = scratch.split_at_mut(cin * pplane);
        for c in 0..cin {
            for y in 0..h {
                let at = c * pplane + (y + r) * pw + r;
                padded[at..at + w].copy_from_slice(&img.channel(c)[y * w..(y + 1) * w]);
            }
        }
        let window = side * side;
        let mut out = Image::zeros(cout, h, w);
        for o in 0..cout {
            acc.fill(0.0);
            for c in 0..cin {
                let src = &padded[c * pplane..(c + 1) * pplane];
                for j in 0..window {
                    let shift = (j / side) * pw + j % side;
                    let m = &self.weights[((o * cin + c) * window + j) * span..][..span];
                    let s = &src[shift..shift + span];
                    for ((a, &mv), &sv) in acc.iter_mut().zip(m).zip(s) {
                        *a += mv * sv;
                    }
                }
            }
            let dst = out.channel_mut(o);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&acc[y * pw..y * pw + w]);
            }
        }
        out
    }
}

/// A block ready to be applied repeatedly to images of one spatial size.
#[derive(Debug, Clone)]
pub struct PreparedBlock<'a> {
    params: &'a BlockParams,
    sampler: DeformSampler,
    stencil: Option<Stencil>,
    eps: f64,
    contrast: bool,
}

impl<'a> PreparedBlock<'a> {
    pub fn new(
        params: &'a BlockParams,
        height: usize,
        width: usize,
        cfg: &AugmentConfig,
    ) -> Result<Self> {
        if params.weights.out_channels != params.weights.in_channels {
            return Err(Error::Shape(format!(
                "block kernel must map C to C channels, got {} -> {}",
                params.weights.in_channels, params.weights.out_channels
            )));
        }
        Self::build(params, height, width, cfg.eps, cfg.enable_contrast)
    }

    fn build(
        params: &'a BlockParams,
        height: usize,
        width: usize,
        eps: f64,
        contrast: bool,
    ) -> Result<Self> {
        let sampler =
            DeformSampler::new(params.weights.size, height, width, params.offsets.as_ref())?;
        let stencil = if sampler.integral {
            None
        } else {
            Stencil::new(&sampler, &params.weights)
        };
        Ok(Self {
            params,
            sampler,
            stencil,
            eps,
            contrast,
        })
    }

    fn convolve(&self, img: &Image, scratch: &mut Vec<f32>) -> Result<Image> {
        let weights = &self.params.weights;
        check_channels(img, weights)?;
        if img.height() != self.sampler.height || img.width() != self.sampler.width {
            return Err(Error::Shape(format!(
                "block prepared for {}x{}, image is {}x{}",
                self.sampler.height,
                self.sampler.width,
                img.height(),
                img.width()
            )));
        }
        if let Some(stencil) = &self.stencil {
            return Ok(stencil.apply(img, weights.out_channels, scratch));
        }
        let plane = img.plane_len();
        let (cin, taps) = (weights.in_channels, weights.taps());
        scratch.resize(cin * plane, 0.0);
        let mut out = Image::zeros(weights.out_channels, img.height(), img.width());
        for tap in 0..taps {
            self.sampler.gather_tap(img, tap, scratch);
            for o in 0..weights.out_channels {
                let dst = out.channel_mut(o);
                for c in 0..cin {
                    let wv = weights.data[(o * cin + c) * taps + tap];
                    let src = &scratch[c * plane..(c + 1) * plane];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        let mut scratch = Vec::new();
        self.apply_with(img, &mut scratch)
    }

    fn apply_with(&self, img: &Image, scratch: &mut Vec<f32>) -> Result<Image> {
        let conv = self.convolve(img, scratch)?;
        if !self.contrast {
            return Ok(conv);
        }
        match (&self.params.gamma, &self.params.beta) {
            (Some(g), Some(b)) => contrast_diversify(&conv, g, b, self.eps),
            _ => Err(invalid(
                "params",
                "contrast enabled but block has no affine parameters",
            )),
        }
    }

    /// Applies the block `reps` times.
    pub fn apply_repeated(&self, img: &Image, reps: usize) -> Result<Image> {
        let mut scratch = Vec::new();
        let mut cur = img.clone();
        for _ in 0..reps {
            cur = self.apply_with(&cur, &mut scratch)?;
        }
        Ok(cur)
    }
}

/// Deformable convolution: each tap reads the input at its grid position plus
/// the per-pixel offset, with bilinear interpolation and zero outside the image.
pub fn deform_conv2d(img: &Image, params: &BlockParams) -> Result<Image> {
    check_channels(img, &params.weights)?;
    let sampler = DeformSampler::new(
        params.weights.size,
        img.height(),
        img.width(),
        params.offsets.as_ref(),
    )?;
    // One-shot use: folding into a stencil would cost more than it saves.
    let block = PreparedBlock {
        params,
        sampler,
        stencil: None,
        eps: 0.0,
        contrast: false,
    };
    block.convolve(img, &mut Vec::new())
}

/// Per-channel `(x - μ) / sqrt(σ² + eps)` with population statistics.
pub fn standardize_channels(img: &Image, eps: f64) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels() {
        let (mean, var) = channel_moments(img.channel(c));
        let inv = 1.0 / (var + eps).sqrt();
        for v in out.channel_mut(c) {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
    out
}

pub(crate) fn channel_moments(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var)
}

/// Largest `f32` below 1. `tanh` rounds to ±1 in `f32` once |x| > ~9.
const TANH_LIMIT: f32 = 1.0 - f32::EPSILON / 2.0;

/// Standardize each channel, apply `γ_c · z + β_c`, then `tanh`.
pub fn contrast_diversify(img: &Image, gamma: &[f32], beta: &[f32], eps: f64) -> Result<Image> {
    let c = img.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ChannelMismatch {
            expected: c,
            actual: gamma.len().min(beta.len()),
        });
    }
    let mut out = img.clone();
    for ch in 0..c {
        let (mean, var) = channel_moments(img.channel(ch));
        let inv = 1.0 / (var + eps).sqrt();
        // Centering first keeps constant channels exactly at zero.
        let (m, scale, b) = (mean as f32, (gamma[ch] as f64 * inv) as f32, beta[ch]);
        for v in out.channel_mut(ch) {
            *v = (scale * (*v - m) + b).tanh().clamp(-TANH_LIMIT, TANH_LIMIT);
        }
    }
    Ok(out)
}

/// One block application: deformable convolution, then the contrast stage if
/// enabled in `cfg`.
pub fn apply_block(img: &Image, params: &BlockParams, cfg: &AugmentConfig) -> Result<Image> {
    PreparedBlock::new(params, img.height(), img.width(), cfg)?.apply(img)
}

fn draw_reps(cfg: &AugmentConfig, rng: &RngStream) -> usize {
    rng.split(1).uniform_int(1, cfg.l_max)
}

/// Samples one block for the batch, draws `L ~ U{1..l_max}` and applies the
/// block `L` times to every image. Returns the augmented batch and `L`.
pub fn progressive_augment(
    batch: &Batch,
    cfg: &AugmentConfig,
    rng: &RngStream,
) -> Result<(Batch, usize)> {
    cfg.validate()?;
    let reps = draw_reps(cfg, rng);
    Ok((progressive_augment_fixed(batch, cfg, rng, reps)?, reps))
}

/// [`progressive_augment`] with the repetition count given instead of drawn.
pub fn progressive_augment_fixed(
    batch: &Batch,
    cfg: &AugmentConfig,
    rng: &RngStream,
    reps: usize,
) -> Result<Batch> {
    cfg.validate()?;
    let (c, h, w) = batch.image_shape();
    let params = sample_block(cfg, c, h, w, &rng.split(0))?;
    let block = PreparedBlock::new(&params, h, w, cfg)?;
    batch.map_images(|_, img| block.apply_repeated(img, reps))
}

/// Ablation arm: like [`progressive_augment`] but every one of the `L`
/// applications uses a freshly sampled block.
pub fn progressive_augment_diff(
    batch: &Batch,
    cfg: &AugmentConfig,
    rng: &RngStream,
) -> Result<(Batch, usize)> {
    cfg.validate()?;
    let reps = draw_reps(cfg, rng);
    Ok((progressive_augment_diff_fixed(batch, cfg, rng, reps)?, reps))
}

/// [`progressive_augment_diff`] with the repetition count given instead of drawn.
pub fn progressive_augment_diff_fixed(
    batch: &Batch,
    cfg: &AugmentConfig,
    rng: &RngStream,
    reps: usize,
) -> Result<Batch> {
    cfg.validate()?;
    let (c, h, w) = batch.image_shape();
    let mut cur = batch.clone();
    for layer in 0..reps {
        let block_rng = if layer == 0 {
            rng.split(0)
        } else {
            rng.split(2).split(layer as u64)
        };
        let params = sample_block(cfg, c, h, w, &block_rng)?;
        let block = PreparedBlock::new(&params, h, w, cfg)?;
        cur = cur.map_images(|_, img| block.apply(img))?;
    }
    Ok(cur)
}

fn check_pool(pool: &[usize]) -> Result<()> {
    if pool.is_empty() {
        return Err(invalid("pool", "kernel size pool is empty"));
    }
    if let Some(k) = pool.iter().find(|&&k| k == 0 || k % 2 == 0) {
        return Err(invalid(
            "pool",
            format!("kernel sizes must be odd, got {k}"),
        ));
    }
    Ok(())
}

/// Kernel for the single-layer baseline: `k` drawn uniformly from `pool`,
/// entries N(0, 1/(k²·C)), optionally multiplied by a smoothing mask with
/// `σ_g ~ U(eps, 1)`.
pub fn randconv_kernel(
    channels: usize,
    pool: &[usize],
    smooth: bool,
    rng: &RngStream,
) -> Result<Kernel> {
    check_pool(pool)?;
    let k = pool[rng.split(0).uniform_int(0, pool.len() - 1)];
    let cfg = AugmentConfig {
        kernel_size: k,
        enable_smoothing: smooth,
        ..AugmentConfig::plain()
    };
    Ok(sample_block(&cfg, channels, 1, 1, &rng.split(1))?.weights)
}

/// Single random convolution per batch, no offsets and no contrast stage.
pub fn randconv_baseline(batch: &Batch, rng: &RngStream, pool: &[usize]) -> Result<Batch> {
    let kernel = randconv_kernel(batch.image_shape().0, pool, false, rng)?;
    batch.map_images(|_, img| conv2d_direct(img, &kernel))
}

/// [`randconv_baseline`] with a Gaussian-smoothed kernel.
pub fn smoothed_randconv_baseline(batch: &Batch, rng: &RngStream, pool: &[usize]) -> Result<Batch> {
    let kernel = randconv_kernel(batch.image_shape().0, pool, true, rng)?;
    batch.map_images(|_, img| conv2d_direct(img, &kernel))
}

/// Kernel with every (k, k) slice multiplied by `smoothing_mask(k, sigma_g)`.
pub fn smooth_kernel(kernel: &Kernel, sigma_g: f64) -> Result<Kernel> {
    let mask = smoothing_mask(kernel.size, sigma_g)?;
    let taps = kernel.taps();
    let data = kernel
        .data
        .iter()
        .enumerate()
        .map(|(i, &w)| (w as f64 * mask[i % taps]) as f32)
        .collect();
    Kernel::new(kernel.out_channels, kernel.in_channels, kernel.size, data)
}
