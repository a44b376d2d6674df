//! Gaussian random fields by spectral synthesis.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Fields whose raw variance falls below this are returned as all zeros.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Real (H, W) field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Mean of the horizontal and vertical lag-1 sample autocorrelations
    /// (non-periodic).
    pub fn lag1_autocorrelation(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let m = self.mean();
        let var = self.variance();
        if var == 0.0 {
            return 0.0;
        }
        let at = |y: usize, x: usize| self.data[y * w + x] - m;
        let mut horiz = 0.0;
        let mut n_h = 0usize;
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                horiz += at(y, x) * at(y, x + 1);
                n_h += 1;
            }
        }
        let mut vert = 0.0;
        let mut n_v = 0usize;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                vert += at(y, x) * at(y + 1, x);
                n_v += 1;
            }
        }
        let mut terms = Vec::with_capacity(2);
        if n_h > 0 {
            terms.push(horiz / n_h as f64 / var);
        }
        if n_v > 0 {
            terms.push(vert / n_v as f64 / var);
        }
        if terms.is_empty() {
            0.0
        } else {
            terms.iter().sum::<f64>() / terms.len() as f64
        }
    }
}

/// Signed integer frequency of FFT bin `i` on an axis of length `n`.
fn frequency_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Draws an (h, w) field with power spectrum proportional to `|k|^-alpha`,
/// standardized to zero mean and unit variance.
///
/// Complex white noise on the frequency grid is scaled by
/// `(kx² + ky²)^(-alpha/4)`, inverse transformed, and the real part kept.
/// The DC bin gets zero amplitude because standardization removes the mean.
pub fn sample_grf(h: usize, w: usize, alpha: f64, rng: &mut RngStream) -> Result<Field> {
    if h == 0 || w == 0 {
        return Err(invalid(
            "size",
            format!("field must be at least 1x1, got {h}x{w}"),
        ));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid(
            "alpha",
            format!("must be finite and >= 0, got {alpha}"),
        ));
    }

    let mut spectrum: Vec<Complex<f64>> = Vec::with_capacity(h * w);
    for y in 0..h {
        let ky = frequency_index(y, h);
        for x in 0..w {
            let kx = frequency_index(x, w);
            let re = rng.standard_normal();
            let im = rng.standard_normal();
            let k2 = kx * kx + ky * ky;
            let amplitude = if k2 == 0.0 {
                0.0
            } else {
                k2.powf(-alpha / 4.0)
            };
            spectrum.push(Complex::new(re * amplitude, im * amplitude));
        }
    }

    inverse_fft_2d(&mut spectrum, h, w);

    let mut field = Field {
        height: h,
        width: w,
        data: spectrum.iter().map(|c| c.re).collect(),
    };
    let mean = field.mean();
    let var = field.variance();
    if var < VARIANCE_FLOOR {
        field.data.iter_mut().for_each(|v| *v = 0.0);
        return Ok(field);
    }
    let inv_std = 1.0 / var.sqrt();
    field
        .data
        .iter_mut()
        .for_each(|v| *v = (*v - mean) * inv_std);
    Ok(field)
}

fn inverse_fft_2d(buf: &mut [Complex<f64>], h: usize, w: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_inverse(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_inverse(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}
