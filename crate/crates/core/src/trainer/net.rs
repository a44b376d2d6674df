//! LeNet-style classifier with hand-written backpropagation.
//!
//! conv → ReLU → 2×2 max-pool → conv → ReLU → 2×2 max-pool → fc → ReLU → fc →
//! softmax. Parameters live in one flat vector; convolutions are lowered to
//! matrix products via im2col.

use std::fmt::Debug;
use std::ops::Range;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Batch, Image};

/// Probabilities below this are floored before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Scalar type the network can run in.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    /// `C = A·B (+ C if accumulate)` with A logically m×k and B logically k×n,
    /// both row-major in storage unless the matching `*_t` flag says the
    /// stored matrix is the transpose.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite cast")
    }

    fn to_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("finite cast")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // storage of a logical rows×cols matrix
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(
                    a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
                    "gemm operand too small"
                );
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: slice lengths checked above cover every index the
                // strides can reach.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub padding: usize,
}

/// Layer widths of the two-conv, two-fc network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_size: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    /// 3×32×32 input, conv 5×5×6, conv 5×5×16, fc 120, fc `classes`.
    pub fn lenet(classes: usize) -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            conv1: ConvSpec {
                filters: 6,
                kernel: 5,
                padding: 0,
            },
            conv2: ConvSpec {
                filters: 16,
                kernel: 5,
                padding: 0,
            },
            hidden: 120,
            classes,
        }
    }

    fn dims(&self) -> Result<Dims> {
        let conv_out = |input: usize, spec: &ConvSpec| -> Result<usize> {
            (input + 2 * spec.padding)
                .checked_sub(spec.kernel)
                .map(|v| v + 1)
                .filter(|&v| v >= 2)
                .ok_or_else(|| Error::Shape(format!("{input}px input too small for {spec:?}")))
        };
        if self.in_channels == 0 || self.classes < 2 || self.hidden == 0 {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        let s1 = conv_out(self.input_size, &self.conv1)?;
        let p1 = s1 / 2;
        let s2 = conv_out(p1, &self.conv2)?;
        let p2 = s2 / 2;
        Ok(Dims {
            s1,
            p1,
            s2,
            p2,
            flat: self.conv2.filters * p2 * p2,
        })
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(Layout::new(self, &self.dims()?).total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dims {
    s1: usize,
    p1: usize,
    s2: usize,
    p2: usize,
    flat: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    w4: Range<usize>,
    b4: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture, dims: &Dims) -> Self {
        let sizes = [
            arch.conv1.filters * arch.in_channels * arch.conv1.kernel * arch.conv1.kernel,
            arch.conv1.filters,
            arch.conv2.filters * arch.conv1.filters * arch.conv2.kernel * arch.conv2.kernel,
            arch.conv2.filters,
            arch.hidden * dims.flat,
            arch.hidden,
            arch.classes * arch.hidden,
            arch.classes,
        ];
        let mut start = 0;
        let mut ranges = sizes.iter().map(|&n| {
            let r = start..start + n;
            start += n;
            r
        });
        let mut next = || ranges.next().expect("eight ranges");
        let layout = Self {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            w3: next(),
            b3: next(),
            w4: next(),
            b4: next(),
            total: 0,
        };
        Self {
            total: layout.b4.end,
            ..layout
        }
    }

    /// (weight, bias, fan_in) per layer.
    fn layers(&self, arch: &Architecture, dims: &Dims) -> [(Range<usize>, Range<usize>, usize); 4] {
        [
            (
                self.w1.clone(),
                self.b1.clone(),
                arch.in_channels * arch.conv1.kernel * arch.conv1.kernel,
            ),
            (
                self.w2.clone(),
                self.b2.clone(),
                arch.conv1.filters * arch.conv2.kernel * arch.conv2.kernel,
            ),
            (self.w3.clone(), self.b3.clone(), dims.flat),
            (self.w4.clone(), self.b4.clone(), arch.hidden),
        ]
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Network parameters and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState<T> {
    arch: Architecture,
    dims: Dims,
    pub params: Vec<T>,
    pub momentum: Vec<T>,
}

/// Activations kept from the forward pass for backpropagation.
/// Per-image activations kept for the backward pass. Patch matrices are
/// rebuilt from the inputs and `pool1` instead of being stored.
struct Trace<T> {
    act1: Vec<Vec<T>>,
    arg1: Vec<Vec<u32>>,
    pool1: Vec<Vec<T>>,
    act2: Vec<Vec<T>>,
    arg2: Vec<Vec<u32>>,
    flat: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Real> ClassifierState<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization of every weight and bias.
    pub fn init(arch: Architecture, rng: &RngStream) -> Result<Self> {
        let dims = arch.dims()?;
        let layout = Layout::new(&arch, &dims);
        let mut params = vec![T::zero(); layout.total];
        for (i, (w, b, fan_in)) in layout.layers(&arch, &dims).into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut r = rng.split(i as u64);
            for p in &mut params[w.start..b.end] {
                *p = T::of(r.uniform(-bound, bound));
            }
        }
        Ok(Self {
            momentum: vec![T::zero(); layout.total],
            params,
            dims,
            arch,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        let dims = arch.dims()?;
        let total = Layout::new(&arch, &dims).total;
        if params.len() != total {
            return Err(Error::Shape(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            momentum: vec![T::zero(); total],
            params,
            dims,
            arch,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.arch, &self.dims)
    }

    /// Zeroes the output layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let l = self.layout();
        self.params[l.w4.start..l.b4.end]
            .iter_mut()
            .for_each(|p| *p = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let expected = (
            self.arch.in_channels,
            self.arch.input_size,
            self.arch.input_size,
        );
        if img.shape() != expected {
            return Err(Error::Shape(format!(
                "network expects {expected:?} input, got {:?}",
                img.shape()
            )));
        }
        Ok(())
    }

    /// Softmax class probabilities, one row per image.
    pub fn forward(&self, images: &[Image]) -> Result<Matrix<T>> {
        Ok(self.forward_traced(images, false)?.0)
    }

    pub fn forward_batch(&self, batch: &Batch) -> Result<Matrix<T>> {
        self.forward(batch.images())
    }

    fn forward_traced(
        &self,
        images: &[Image],
        keep: bool,
    ) -> Result<(Matrix<T>, Option<Trace<T>>)> {
        if images.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for img in images {
            self.check_input(img)?;
        }
        let a = &self.arch;
        let d = self.dims;
        let l = self.layout();
        let p = &self.params;
        let n = images.len();

        let mut trace = Trace {
            act1: Vec::new(),
            arg1: Vec::new(),
            pool1: Vec::new(),
            act2: Vec::new(),
            arg2: Vec::new(),
            flat: vec![T::zero(); n * d.flat],
            hidden: vec![T::zero(); n * a.hidden],
        };

        let mut cols = Vec::new();
        for (i, img) in images.iter().enumerate() {
            let x = to_real::<T>(img);
            im2col(&x, a.in_channels, a.input_size, a.conv1, d.s1, &mut cols);
            let act1 = conv_relu(
                &p[l.w1.clone()],
                &p[l.b1.clone()],
                &cols,
                a.conv1.filters,
                d.s1,
            );
            let (pool1, arg1) = max_pool(&act1, a.conv1.filters, d.s1, d.p1);
            im2col(&pool1, a.conv1.filters, d.p1, a.conv2, d.s2, &mut cols);
            let act2 = conv_relu(
                &p[l.w2.clone()],
                &p[l.b2.clone()],
                &cols,
                a.conv2.filters,
                d.s2,
            );
            let (pool2, arg2) = max_pool(&act2, a.conv2.filters, d.s2, d.p2);
            trace.flat[i * d.flat..(i + 1) * d.flat].copy_from_slice(&pool2);
            if keep {
                trace.act1.push(act1);
                trace.arg1.push(arg1);
                trace.pool1.push(pool1);
                trace.act2.push(act2);
                trace.arg2.push(arg2);
            }
        }

        // hidden = relu(flat · W3ᵀ + b3)
        T::gemm(
            n,
            d.flat,
            a.hidden,
            &trace.flat,
            false,
            &p[l.w3.clone()],
            true,
            &mut trace.hidden,
            false,
        );
        for row in trace.hidden.chunks_exact_mut(a.hidden) {
            for (h, &b) in row.iter_mut().zip(&p[l.b3.clone()]) {
                *h = (*h + b).max(T::zero());
            }
        }
        let mut logits = vec![T::zero(); n * a.classes];
        T::gemm(
            n,
            a.hidden,
            a.classes,
            &trace.hidden,
            false,
            &p[l.w4.clone()],
            true,
            &mut logits,
            false,
        );
        for row in logits.chunks_exact_mut(a.classes) {
            for (z, &b) in row.iter_mut().zip(&p[l.b4.clone()]) {
                *z = *z + b;
            }
            softmax_in_place(row);
        }
        let probs = Matrix {
            rows: n,
            cols: a.classes,
            data: logits,
        };
        Ok((probs, keep.then_some(trace)))
    }

    /// Mean cross-entropy over `images` and its exact gradient with respect
    /// to every parameter.
    pub fn loss_and_gradient(&self, images: &[Image], labels: &[usize]) -> Result<(f64, Vec<T>)> {
        if labels.len() != images.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.arch.classes) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                self.arch.classes
            )));
        }
        let (probs, trace) = self.forward_traced(images, true)?;
        let trace = trace.expect("trace requested");
        let loss = cross_entropy(&probs, labels);

        let a = &self.arch;
        let d = self.dims;
        let l = self.layout();
        let p = &self.params;
        let n = images.len();
        let inv_n = T::of(1.0 / n as f64);
        let mut grad = vec![T::zero(); l.total];

        // d logits = (probs - onehot) / n
        let mut dlogits = probs.data.clone();
        for (r, &y) in labels.iter().enumerate() {
            dlogits[r * a.classes + y] = dlogits[r * a.classes + y] - T::one();
        }
        dlogits.iter_mut().for_each(|v| *v = *v * inv_n);

        T::gemm(
            a.classes,
            n,
            a.hidden,
            &dlogits,
            true,
            &trace.hidden,
            false,
            &mut grad[l.w4.clone()],
            false,
        );
        column_sums(&dlogits, a.classes, &mut grad[l.b4.clone()]);

        let mut dhidden = vec![T::zero(); n * a.hidden];
        T::gemm(
            n,
            a.classes,
            a.hidden,
            &dlogits,
            false,
            &p[l.w4.clone()],
            false,
            &mut dhidden,
            false,
        );
        for (g, &h) in dhidden.iter_mut().zip(&trace.hidden) {
            if h <= T::zero() {
                *g = T::zero();
            }
        }
        T::gemm(
            a.hidden,
            n,
            d.flat,
            &dhidden,
            true,
            &trace.flat,
            false,
            &mut grad[l.w3.clone()],
            false,
        );
        column_sums(&dhidden, a.hidden, &mut grad[l.b3.clone()]);

        let mut dflat = vec![T::zero(); n * d.flat];
        T::gemm(
            n,
            a.hidden,
            d.flat,
            &dhidden,
            false,
            &p[l.w3.clone()],
            false,
            &mut dflat,
            false,
        );

        let (gw1, rest) = grad.split_at_mut(l.b1.start);
        let (gb1, rest) = rest.split_at_mut(l.w2.start - l.b1.start);
        let (gw2, rest) = rest.split_at_mut(l.b2.start - l.w2.start);
        let gb2 = &mut rest[..l.b2.len()];
        let gw1 = &mut gw1[l.w1.clone()];

        let k2 = a.conv1.filters * a.conv2.kernel * a.conv2.kernel;
        let mut dcols2 = vec![T::zero(); k2 * d.s2 * d.s2];
        let mut cols = Vec::new();
        for i in 0..n {
            let dz2 = unpool_relu(
                &dflat[i * d.flat..(i + 1) * d.flat],
                &trace.arg2[i],
                &trace.act2[i],
            );
            im2col(
                &trace.pool1[i],
                a.conv1.filters,
                d.p1,
                a.conv2,
                d.s2,
                &mut cols,
            );
            accumulate_conv_grads(&dz2, &cols, a.conv2.filters, d.s2 * d.s2, gw2, gb2);
            T::gemm(
                k2,
                a.conv2.filters,
                d.s2 * d.s2,
                &p[l.w2.clone()],
                true,
                &dz2,
                false,
                &mut dcols2,
                false,
            );
            let dpool1 = col2im(&dcols2, a.conv1.filters, d.p1, a.conv2, d.s2);
            let dz1 = unpool_relu(&dpool1, &trace.arg1[i], &trace.act1[i]);
            let x = to_real::<T>(&images[i]);
            im2col(&x, a.in_channels, a.input_size, a.conv1, d.s1, &mut cols);
            accumulate_conv_grads(&dz1, &cols, a.conv1.filters, d.s1 * d.s1, gw1, gb1);
        }
        Ok((loss, grad))
    }

    /// Loss and gradient for a labelled batch.
    pub fn backward(&self, batch: &Batch) -> Result<(f64, Vec<T>)> {
        let labels = batch
            .labels()
            .ok_or_else(|| Error::Shape("batch has no labels".into()))?;
        self.loss_and_gradient(batch.images(), labels)
    }

    /// Index of the most probable class per image.
    pub fn predict(&self, images: &[Image]) -> Result<Vec<usize>> {
        let probs = self.forward(images)?;
        Ok((0..probs.rows).map(|r| argmax(probs.row(r))).collect())
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean of `-ln max(p_true, 1e-12)`.
pub fn cross_entropy<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs.row(r)[y].to_f64().max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox + offset` lies inside `0..size`.
fn valid_span(offset: isize, size: usize, out: usize) -> (usize, usize) {
    let lo = (-offset).clamp(0, out as isize) as usize;
    let hi = (size as isize - offset).clamp(lo as isize, out as isize) as usize;
    (lo, hi)
}

fn to_real<T: Real>(img: &Image) -> Vec<T> {
    img.data().iter().map(|&v| T::of(v as f64)).collect()
}

/// Lowers a (c, s, s) input to a (c·k·k, out·out) patch matrix in `cols`.
fn im2col<T: Real>(
    x: &[T],
    channels: usize,
    size: usize,
    spec: ConvSpec,
    out: usize,
    cols: &mut Vec<T>,
) {
    let k = spec.kernel;
    let pad = spec.padding as isize;
    cols.clear();
    cols.resize(channels * k * k * out * out, T::zero());
    for c in 0..channels {
        let plane = &x[c * size * size..(c + 1) * size * size];
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky as isize - pad, size, out);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (lo, hi) = valid_span(dx, size, out);
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * out * out..(row + 1) * out * out];
                for oy in ylo..yhi {
                    let sy = (oy as isize + ky as isize - pad) as usize;
                    let src = &plane[sy * size..(sy + 1) * size];
                    let s0 = (lo as isize + dx) as usize;
                    dst[oy * out + lo..oy * out + hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], channels: usize, size: usize, spec: ConvSpec, out: usize) -> Vec<T> {
    let k = spec.kernel;
    let pad = spec.padding as isize;
    let mut x = vec![T::zero(); channels * size * size];
    for c in 0..channels {
        let plane = &mut x[c * size * size..(c + 1) * size * size];
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky as isize - pad, size, out);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (lo, hi) = valid_span(dx, size, out);
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * out * out..(row + 1) * out * out];
                for oy in ylo..yhi {
                    let sy = (oy as isize + ky as isize - pad) as usize;
                    let s0 = (lo as isize + dx) as usize;
                    let dst = &mut plane[sy * size + s0..sy * size + s0 + hi - lo];
                    for (d, &v) in dst.iter_mut().zip(&src[oy * out + lo..oy * out + hi]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
    x
}

fn conv_relu<T: Real>(w: &[T], b: &[T], cols: &[T], filters: usize, out: usize) -> Vec<T> {
    let plane = out * out;
    let kdim = cols.len() / plane;
    let mut z = vec![T::zero(); filters * plane];
    T::gemm(filters, kdim, plane, w, false, cols, false, &mut z, false);
    for (f, chunk) in z.chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v + b[f]).max(T::zero());
        }
    }
    z
}

/// 2×2 stride-2 max pooling; ties go to the first element in scan order.
fn max_pool<T: Real>(x: &[T], channels: usize, size: usize, out: usize) -> (Vec<T>, Vec<u32>) {
    let mut pooled = vec![T::zero(); channels * out * out];
    let mut arg = vec![0u32; channels * out * out];
    for c in 0..channels {
        for oy in 0..out {
            for ox in 0..out {
                let mut best_idx = c * size * size + 2 * oy * size + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = c * size * size + (2 * oy + dy) * size + 2 * ox + dx;
                    if x[idx] > x[best_idx] {
                        best_idx = idx;
                    }
                }
                let o = (c * out + oy) * out + ox;
                pooled[o] = x[best_idx];
                arg[o] = best_idx as u32;
            }
        }
    }
    (pooled, arg)
}

/// Routes pooled gradients back to their argmax positions and masks by ReLU.
fn unpool_relu<T: Real>(dpooled: &[T], arg: &[u32], act: &[T]) -> Vec<T> {
    let mut dz = vec![T::zero(); act.len()];
    for (&g, &idx) in dpooled.iter().zip(arg) {
        let idx = idx as usize;
        if act[idx] > T::zero() {
            dz[idx] = dz[idx] + g;
        }
    }
    dz
}

fn accumulate_conv_grads<T: Real>(
    dz: &[T],
    cols: &[T],
    filters: usize,
    plane: usize,
    gw: &mut [T],
    gb: &mut [T],
) {
    let kdim = cols.len() / plane;
    T::gemm(filters, plane, kdim, dz, false, cols, true, gw, true);
    for (f, chunk) in dz.chunks_exact(plane).enumerate() {
        gb[f] = chunk.iter().fold(gb[f], |acc, &v| acc + v);
    }
}
