//! Per-mini-batch sampling of random convolution block parameters.

pub mod grf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

pub use grf::{sample_grf, Field};

/// Sampling hyperparameters for one random convolution block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Odd kernel size `k`.
    pub kernel_size: usize,
    /// Repetitions are drawn from `1..=l_max`.
    pub l_max: usize,
    /// Weight standard deviation; `None` means `1 / sqrt(k² · C_in)`.
    pub sigma_w: Option<f64>,
    /// Upper bound `b_g` of the smoothing width, `σ_g ~ U(eps, b_g)`.
    pub smooth_bound: f64,
    /// Upper bound `b_Δ` of the offset scale in pixels, `σ_Δ ~ U(eps, b_Δ)`.
    pub offset_bound: f64,
    /// Power-spectrum exponent of the offset fields.
    pub grf_alpha: f64,
    pub sigma_gamma: f64,
    pub sigma_beta: f64,
    pub eps: f64,
    pub enable_smoothing: bool,
    pub enable_offsets: bool,
    pub enable_contrast: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            l_max: 10,
            sigma_w: None,
            smooth_bound: 1.0,
            offset_bound: 0.2,
            grf_alpha: 10.0,
            sigma_gamma: 0.5,
            sigma_beta: 0.5,
            eps: 1e-6,
            enable_smoothing: true,
            enable_offsets: true,
            enable_contrast: true,
        }
    }
}

impl AugmentConfig {
    /// Defaults with every diversification component switched off: a plain
    /// He-initialized convolution stacked progressively.
    pub fn plain() -> Self {
        Self {
            enable_smoothing: false,
            enable_offsets: false,
            enable_contrast: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(invalid(
                "kernel_size",
                format!("must be odd and >= 1, got {}", self.kernel_size),
            ));
        }
        if self.l_max == 0 {
            return Err(invalid("l_max", "must be >= 1"));
        }
        let non_negative = [
            ("smooth_bound", self.smooth_bound),
            ("offset_bound", self.offset_bound),
            ("grf_alpha", self.grf_alpha),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_beta", self.sigma_beta),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if let Some(s) = self.sigma_w {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(invalid(
                    "sigma_w",
                    format!("must be finite and >= 0, got {s}"),
                ));
            }
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(invalid(
                "eps",
                format!("must be finite and > 0, got {}", self.eps),
            ));
        }
        Ok(())
    }

    pub fn weight_sigma(&self, in_channels: usize) -> f64 {
        self.sigma_w
            .unwrap_or_else(|| he_sigma(self.kernel_size, in_channels))
    }
}

/// `1 / sqrt(k² · C_in)`.
pub fn he_sigma(kernel_size: usize, in_channels: usize) -> f64 {
    1.0 / ((kernel_size * kernel_size * in_channels) as f64).sqrt()
}

/// Convolution weights of shape (C_out, C_in, k, k).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub data: Vec<f32>,
}

impl Kernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        size: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(invalid("kernel size", format!("must be odd, got {size}")));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::Shape(
                "kernel channel counts must be positive".into(),
            ));
        }
        if data.len() != out_channels * in_channels * size * size {
            return Err(Error::Shape(format!(
                "kernel data length {} does not match {out_channels}x{in_channels}x{size}x{size}",
                data.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            size,
            data,
        })
    }

    pub fn taps(&self) -> usize {
        self.size * self.size
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.data[((o * self.in_channels + i) * self.size + ky) * self.size + kx]
    }
}

/// Per-pixel sampling displacements of shape (2k², H, W) in pixels: planes
/// `0..k²` hold the vertical offset of each tap, planes `k²..2k²` the
/// horizontal one. Shared by all input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub kernel_size: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl OffsetField {
    pub fn zeros(kernel_size: usize, height: usize, width: usize) -> Self {
        Self {
            kernel_size,
            height,
            width,
            data: vec![0.0; 2 * kernel_size * kernel_size * height * width],
        }
    }

    /// Every tap at every pixel displaced by the same `(dy, dx)`.
    pub fn constant(kernel_size: usize, height: usize, width: usize, dy: f32, dx: f32) -> Self {
        let taps = kernel_size * kernel_size;
        let plane = height * width;
        let mut data = vec![dy; 2 * taps * plane];
        data[taps * plane..].iter_mut().for_each(|v| *v = dx);
        Self {
            kernel_size,
            height,
            width,
            data,
        }
    }

    pub fn planes(&self) -> usize {
        2 * self.kernel_size * self.kernel_size
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[p * n..(p + 1) * n]
    }
}

/// All random parameters of one convolution block. Sampled once per
/// mini-batch and reused unchanged for every progressive application.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub weights: Kernel,
    pub offsets: Option<OffsetField>,
    pub gamma: Option<Vec<f32>>,
    pub beta: Option<Vec<f32>>,
    /// Smoothing width drawn for this block, if smoothing was on.
    pub sigma_g: Option<f64>,
    /// Offset scale drawn for this block, if offsets were on.
    pub sigma_delta: Option<f64>,
}

/// Gaussian mask `exp(-(i² + j²) / (2σ_g²))` over the centered (k, k) grid, row-major.
pub fn smoothing_mask(k: usize, sigma_g: f64) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid("k", format!("must be odd, got {k}")));
    }
    if !(sigma_g > 0.0) {
        return Err(invalid("sigma_g", format!("must be > 0, got {sigma_g}")));
    }
    let r = (k / 2) as i64;
    let denom = 2.0 * sigma_g * sigma_g;
    let mut mask = Vec::with_capacity(k * k);
    for i in -r..=r {
        for j in -r..=r {
            let d2 = (i * i + j * j) as f64;
            mask.push(if d2 == 0.0 { 1.0 } else { (-d2 / denom).exp() });
        }
    }
    Ok(mask)
}

/// Draws a (channels, channels, k, k) kernel with N(0, σ_w²) entries. With
/// smoothing on, one `σ_g ~ U(eps, b_g)` is drawn and every (k, k) slice is
/// multiplied by `smoothing_mask(k, σ_g)`.
pub fn sample_weights(
    cfg: &AugmentConfig,
    in_channels: usize,
    out_channels: usize,
    rng: &mut RngStream,
) -> Result<(Kernel, Option<f64>)> {
    cfg.validate()?;
    let k = cfg.kernel_size;
    let taps = k * k;
    let raw = rng.gaussian_draw(
        out_channels * in_channels * taps,
        cfg.weight_sigma(in_channels),
    )?;
    let (mask, sigma_g) = if cfg.enable_smoothing {
        let sigma_g = rng.uniform(cfg.eps, cfg.smooth_bound);
        (Some(smoothing_mask(k, sigma_g)?), Some(sigma_g))
    } else {
        (None, None)
    };
    let data = raw
        .iter()
        .enumerate()
        .map(|(idx, &w)| match &mask {
            Some(m) => (w * m[idx % taps]) as f32,
            None => w as f32,
        })
        .collect();
    Ok((Kernel::new(out_channels, in_channels, k, data)?, sigma_g))
}

/// Draws `σ_Δ ~ U(eps, b_Δ)` and 2k² independent GRFs scaled by it. Returns a
/// zero field when offsets are disabled.
pub fn sample_offsets(
    cfg: &AugmentConfig,
    h: usize,
    w: usize,
    rng: &mut RngStream,
) -> Result<(OffsetField, Option<f64>)> {
    cfg.validate()?;
    let k = cfg.kernel_size;
    if !cfg.enable_offsets {
        return Ok((OffsetField::zeros(k, h, w), None));
    }
    let sigma_delta = rng.uniform(cfg.eps, cfg.offset_bound);
    let planes = 2 * k * k;
    let mut data = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        let field = sample_grf(h, w, cfg.grf_alpha, &mut rng.split(p as u64))?;
        data.extend(field.data.iter().map(|&v| (v * sigma_delta) as f32));
    }
    Ok((
        OffsetField {
            kernel_size: k,
            height: h,
            width: w,
            data,
        },
        Some(sigma_delta),
    ))
}

/// Per-channel `γ ~ N(0, σ_γ²)` and `β ~ N(0, σ_β²)`.
pub fn sample_affine(
    cfg: &AugmentConfig,
    channels: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f32>, Vec<f32>)> {
    cfg.validate()?;
    let gamma = rng.gaussian_draw(channels, cfg.sigma_gamma)?;
    let beta = rng.gaussian_draw(channels, cfg.sigma_beta)?;
    Ok((
        gamma.into_iter().map(|v| v as f32).collect(),
        beta.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Samples a full block for images of shape (channels, h, w). Each component
/// reads its own substream of `rng`.
pub fn sample_block(
    cfg: &AugmentConfig,
    channels: usize,
    h: usize,
    w: usize,
    rng: &RngStream,
) -> Result<BlockParams> {
    cfg.validate()?;
    if channels == 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "image shape must be positive, got {channels}x{h}x{w}"
        )));
    }
    let (weights, sigma_g) = sample_weights(cfg, channels, channels, &mut rng.split(0))?;
    let (offsets, sigma_delta) = if cfg.enable_offsets {
        let (field, sigma) = sample_offsets(cfg, h, w, &mut rng.split(1))?;
        (Some(field), sigma)
    } else {
        (None, None)
    };
    let (gamma, beta) = if cfg.enable_contrast {
        let (g, b) = sample_affine(cfg, channels, &mut rng.split(2))?;
        (Some(g), Some(b))
    } else {
        (None, None)
    };
    Ok(BlockParams {
        weights,
        offsets,
        gamma,
        beta,
        sigma_g,
        sigma_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_of(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn mask_closed_form() {
        let m = smoothing_mask(3, 1.0).unwrap();
        let edge = (-0.5f64).exp();
        let corner = (-1.0f64).exp();
        assert_eq!(m[4], 1.0);
        for i in [1, 3, 5, 7] {
            assert!((m[i] - edge).abs() < 1e-12);
        }
        for i in [0, 2, 6, 8] {
            assert!((m[i] - corner).abs() < 1e-12);
        }
        assert!((edge - 0.60653).abs() < 1e-5 && (corner - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn mask_limits() {
        let narrow = smoothing_mask(3, 1e-3).unwrap();
        for (i, v) in narrow.iter().enumerate() {
            let target = if i == 4 { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-6);
        }
        let wide = smoothing_mask(3, 1e3).unwrap();
        assert!(wide.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn mask_rejects_bad_args() {
        assert!(smoothing_mask(3, 0.0).is_err());
        assert!(smoothing_mask(3, -1.0).is_err());
        assert!(smoothing_mask(4, 1.0).is_err());
    }

    #[test]
    fn he_sigma_value() {
        assert!((he_sigma(3, 3) - 0.19245).abs() < 1e-5);
    }

    #[test]
    fn unsmoothed_weight_moments() {
        let cfg = AugmentConfig {
            enable_smoothing: false,
            ..AugmentConfig::default()
        };
        let mut all = Vec::new();
        let rng = RngStream::new(11);
        for i in 0..4000 {
            let (k, sg) = sample_weights(&cfg, 3, 3, &mut rng.split(i)).unwrap();
            assert!(sg.is_none());
            all.extend(k.data.iter().map(|&v| v as f64));
        }
        assert!(all.len() >= 100_000);
        let s = std_of(&all);
        let target = he_sigma(3, 3);
        assert!((s / target - 1.0).abs() < 0.03, "std {s} vs {target}");
    }

    #[test]
    fn smoothing_scales_each_tap() {
        let cfg = AugmentConfig::default();
        let plain = AugmentConfig {
            enable_smoothing: false,
            ..cfg.clone()
        };
        let rng = RngStream::new(4);
        let (smoothed, sg) = sample_weights(&cfg, 3, 3, &mut rng.split(0)).unwrap();
        let (raw, _) = sample_weights(&plain, 3, 3, &mut rng.split(0)).unwrap();
        let mask = smoothing_mask(3, sg.unwrap()).unwrap();
        for (i, (s, r)) in smoothed.data.iter().zip(&raw.data).enumerate() {
            assert!((*s as f64 - *r as f64 * mask[i % 9]).abs() < 1e-7);
            assert!(s.abs() <= r.abs());
        }
    }

    #[test]
    fn offsets_disabled_are_zero() {
        let cfg = AugmentConfig {
            enable_offsets: false,
            ..AugmentConfig::default()
        };
        let (f, s) = sample_offsets(&cfg, 8, 8, &mut RngStream::new(0)).unwrap();
        assert!(s.is_none());
        assert!(f.data.iter().all(|&v| v == 0.0));
        assert_eq!(f.planes(), 18);
    }

    #[test]
    fn offset_scale_matches_sigma_delta() {
        let cfg = AugmentConfig::default();
        for seed in 0..5 {
            let (f, s) = sample_offsets(&cfg, 64, 64, &mut RngStream::new(seed)).unwrap();
            let s = s.unwrap();
            assert!(s >= cfg.eps && s < cfg.offset_bound);
            let v: Vec<f64> = f.data.iter().map(|&x| x as f64).collect();
            let ratio = std_of(&v) / s;
            assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn affine_moments() {
        let cfg = AugmentConfig::default();
        let (g, b) = sample_affine(&cfg, 100_000, &mut RngStream::new(8)).unwrap();
        let g: Vec<f64> = g.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        assert!((std_of(&g) / 0.5 - 1.0).abs() < 0.03);
        assert!((std_of(&b) / 0.5 - 1.0).abs() < 0.03);

        let zero = AugmentConfig {
            sigma_gamma: 0.0,
            ..cfg
        };
        let (g, _) = sample_affine(&zero, 3, &mut RngStream::new(8)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_defaults_and_determinism() {
        let cfg = AugmentConfig::default();
        let rng = RngStream::new(77);
        let a = sample_block(&cfg, 3, 32, 32, &rng).unwrap();
        let b = sample_block(&cfg, 3, 32, 32, &rng).unwrap();
        assert_eq!(a, b);
        let offsets = a.offsets.as_ref().unwrap();
        assert_eq!(offsets.planes(), 18);
        assert_eq!(offsets.data.len(), 18 * 32 * 32);
        assert_eq!(a.gamma.as_ref().unwrap().len(), 3);
        assert!(a.weights.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn block_with_switches_off() {
        let p = sample_block(&AugmentConfig::plain(), 3, 16, 16, &RngStream::new(1)).unwrap();
        assert!(p.offsets.is_none() && p.gamma.is_none() && p.beta.is_none());
        assert!(p.sigma_g.is_none());
        assert_eq!(p.weights.size, 3);
    }

    #[test]
    fn config_validation() {
        let bad = [
            AugmentConfig {
                kernel_size: 4,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                kernel_size: 0,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                l_max: 0,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                eps: 0.0,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                sigma_beta: -0.1,
                ..AugmentConfig::default()
            },
            AugmentConfig {
                sigma_w: Some(-1.0),
                ..AugmentConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        AugmentConfig::default().validate().unwrap();
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let parsed: AugmentConfig = serde_json::from_str(r#"{"l_max": 4}"#).unwrap();
        assert_eq!(parsed.l_max, 4);
        assert_eq!(parsed.kernel_size, 3);
        assert!(serde_json::from_str::<AugmentConfig>(r#"{"lmax": 4}"#).is_err());
    }
}
