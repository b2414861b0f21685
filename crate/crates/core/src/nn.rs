//! Neural-layer substrate: convolution, activation, linear, residual blocks,
//! pooling and softmax, each with a hand-derived backward pass.
//!
//! There is no tape. Layers are pure in `forward` (`&self`), and `backward`
//! takes the same input the forward saw plus the upstream gradient,
//! accumulating parameter gradients into the layer and returning the input
//! gradient. Containers (the UNet, the denoiser, the discriminator) keep the
//! intermediate activations they need and chain these calls by hand, which
//! keeps every gradient auditable against finite differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Tensor3};

/// Leaky-ReLU slope used throughout the toolkit.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Anything that owns learnable parameters, visited in a fixed order.
///
/// The visitation order is the contract behind optimizer state pairing and
/// checkpoint layout, so implementations must keep it stable.
pub trait Parameterized<S: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>));
}

/// Zero every gradient accumulator in `net`.
pub fn zero_grads<S: Scalar>(net: &mut dyn Parameterized<S>) {
    net.visit_params_mut(&mut |_, p| p.zero_grad());
}

/// Total number of scalar parameters in `net`.
pub fn param_count<S: Scalar>(net: &dyn Parameterized<S>) -> usize {
    let mut n = 0;
    net.visit_params(&mut |_, p| n += p.len());
    n
}

/// Names of all parameters in visitation order.
pub fn param_names<S: Scalar>(net: &dyn Parameterized<S>) -> Vec<String> {
    let mut names = Vec::new();
    net.visit_params(&mut |name, _| names.push(String::from(name)));
    names
}

/// A layer usable by the generic gradient checker: one tensor in, one out.
pub trait UnaryLayer<S: Scalar>: Parameterized<S> {
    fn forward(&self, x: &Tensor3<S>) -> Result<Tensor3<S>>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>>;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2D convolution with square kernel, zero padding and uniform stride.
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    /// Kernel, dims `[out_c, in_c, k, k]`.
    pub w: Param<S>,
    /// Bias, dims `[out_c]`.
    pub b: Param<S>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<S: Scalar> Conv2d<S> {
    /// Zero-initialized convolution; call [`Conv2d::init_kaiming`] for use.
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be >= 1");
        Conv2d {
            w: Param::new(&[out_c, in_c, k, k]),
            b: Param::new(&[out_c]),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    /// Kaiming fan-in init matched to the leaky-ReLU slope; bias stays zero.
    pub fn init_kaiming<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let std = S::cast(std);
        for v in self.w.value.iter_mut() {
            *v = S::standard_normal(rng) * std;
        }
    }

    /// Output spatial dims for an input of the given size.
    pub fn out_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let span_h = in_h + 2 * self.pad;
        let span_w = in_w + 2 * self.pad;
        if span_h < self.k || span_w < self.k {
            return Err(CoreError::InvalidArgument {
                what: "Conv2d::out_dims",
                detail: format!(
                    "kernel {k}x{k} does not fit input {in_h}x{in_w} with pad {p}",
                    k = self.k,
                    p = self.pad
                ),
            });
        }
        Ok((
            (span_h - self.k) / self.stride + 1,
            (span_w - self.k) / self.stride + 1,
        ))
    }

    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> S {
        self.w.value[((o * self.in_c + i) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&self, input: &Tensor3<S>) -> Result<Tensor3<S>> {
        if input.channels() != self.in_c {
            return Err(CoreError::ShapeMismatch {
                what: "Conv2d::forward input channels",
                expected: (self.in_c, input.height(), input.width()),
                got: input.shape(),
            });
        }
        let (in_h, in_w) = (input.height(), input.width());
        let (out_h, out_w) = self.out_dims(in_h, in_w)?;
        let mut out = Tensor3::zeros(self.out_c, out_h, out_w);

        for o in 0..self.out_c {
            out.channel_mut(o).fill(self.b.value[o]);
            for i in 0..self.in_c {
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight(o, i, ky, kx);
                        self.accumulate_tap(&mut out, input, o, i, ky, kx, wv);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adds `wv * shifted input` into output channel `o` for one kernel tap.
    ///
    /// The x-range algebra keeps the inner loop a contiguous (or strided)
    /// slice walk with no per-element bounds logic.
    fn accumulate_tap(
        &self,
        out: &mut Tensor3<S>,
        input: &Tensor3<S>,
        o: usize,
        i: usize,
        ky: usize,
        kx: usize,
        wv: S,
    ) {
        let (in_h, in_w) = (input.height(), input.width());
        let (out_h, out_w) = (out.height(), out.width());
        let (s, p) = (self.stride as isize, self.pad as isize);
        let (ky, kx) = (ky as isize, kx as isize);
        for y in 0..out_h as isize {
            let iy = y * s + ky - p;
            if iy < 0 || iy >= in_h as isize {
                continue;
            }
            // Valid x satisfy 0 <= x*s + kx - p < in_w.
            let x_lo = ((p - kx + s - 1).div_euclid(s)).max(0);
            let x_hi = (((in_w as isize - kx + p - 1).div_euclid(s)) + 1).min(out_w as isize);
            if x_lo >= x_hi {
                continue;
            }
            let in_row = input.row(i, iy as usize);
            let out_row = out.row_mut(o, y as usize);
            if s == 1 {
                let off = (kx - p) as isize;
                let src = &in_row[(x_lo + off) as usize..(x_hi + off) as usize];
                let dst = &mut out_row[x_lo as usize..x_hi as usize];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += wv * v;
                }
            } else {
                for x in x_lo..x_hi {
                    let ix = (x * s + kx - p) as usize;
                    out_row[x as usize] += wv * in_row[ix];
                }
            }
        }
    }

    /// Accumulates kernel/bias gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        let (in_h, in_w) = (input.height(), input.width());
        let (out_h, out_w) = self.out_dims(in_h, in_w)?;
        if grad_out.shape() != (self.out_c, out_h, out_w) {
            return Err(CoreError::ShapeMismatch {
                what: "Conv2d::backward grad_out",
                expected: (self.out_c, out_h, out_w),
                got: grad_out.shape(),
            });
        }
        let mut grad_in = Tensor3::zeros(self.in_c, in_h, in_w);
        let (s, p) = (self.stride as isize, self.pad as isize);

        for o in 0..self.out_c {
            let mut gb = S::zero();
            for &g in grad_out.channel(o) {
                gb += g;
            }
            self.b.grad[o] += gb;

            for i in 0..self.in_c {
                for ky in 0..self.k as isize {
                    for kx in 0..self.k as isize {
                        let widx =
                            ((o * self.in_c + i) * self.k + ky as usize) * self.k + kx as usize;
                        let wv = self.w.value[widx];
                        let mut gw = S::zero();
                        for y in 0..out_h as isize {
                            let iy = y * s + ky - p;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let x_lo = ((p - kx + s - 1).div_euclid(s)).max(0);
                            let x_hi = (((in_w as isize - kx + p - 1).div_euclid(s)) + 1)
                                .min(out_w as isize);
                            if x_lo >= x_hi {
                                continue;
                            }
                            let g_row = grad_out.row(o, y as usize);
                            let in_row = input.row(i, iy as usize);
                            let gi_row = grad_in.row_mut(i, iy as usize);
                            if s == 1 {
                                let off = kx - p;
                                let gs = &g_row[x_lo as usize..x_hi as usize];
                                let is = &in_row[(x_lo + off) as usize..(x_hi + off) as usize];
                                for (&g, &v) in gs.iter().zip(is) {
                                    gw += g * v;
                                }
                                let gis =
                                    &mut gi_row[(x_lo + off) as usize..(x_hi + off) as usize];
                                for (d, &g) in gis.iter_mut().zip(gs) {
                                    *d += wv * g;
                                }
                            } else {
                                for x in x_lo..x_hi {
                                    let ix = (x * s + kx - p) as usize;
                                    let g = g_row[x as usize];
                                    gw += g * in_row[ix];
                                    gi_row[ix] += wv * g;
                                }
                            }
                        }
                        self.w.grad[widx] += gw;
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

impl<S: Scalar> Parameterized<S> for Conv2d<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

impl<S: Scalar> UnaryLayer<S> for Conv2d<S> {
    fn forward(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        Conv2d::forward(self, x)
    }

    fn backward(&mut self, x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        Conv2d::backward(self, x, grad_out)
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn leaky_relu<S: Scalar>(x: &Tensor3<S>, slope: S) -> Tensor3<S> {
    x.map(|v| if v >= S::zero() { v } else { v * slope })
}

/// Subgradient at 0 is taken on the positive branch.
pub fn leaky_relu_backward<S: Scalar>(
    x: &Tensor3<S>,
    grad_out: &Tensor3<S>,
    slope: S,
) -> Result<Tensor3<S>> {
    x.zip_map(grad_out, |v, g| if v >= S::zero() { g } else { g * slope })
}

/// Clamp to [0, 1], the image value range.
pub fn clamp01<S: Scalar>(x: &Tensor3<S>) -> Tensor3<S> {
    x.map(|v| v.min(S::one()).max(S::zero()))
}

/// Gradient passes where the input lies in [0, 1] (inclusive at the edges,
/// so a freshly initialized residual head does not start dead on saturated
/// image pixels) and is zero outside.
pub fn clamp01_backward<S: Scalar>(x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
    x.zip_map(grad_out, |v, g| {
        if v >= S::zero() && v <= S::one() {
            g
        } else {
            S::zero()
        }
    })
}

/// Stand-alone leaky-ReLU layer (parameter-free), mainly for the gradient
/// checker; composites call the free functions directly.
#[derive(Debug, Clone)]
pub struct LeakyRelu<S> {
    pub slope: S,
}

impl<S: Scalar> LeakyRelu<S> {
    pub fn default_slope() -> Self {
        LeakyRelu {
            slope: S::cast(LEAKY_SLOPE),
        }
    }
}

impl<S: Scalar> Parameterized<S> for LeakyRelu<S> {
    fn visit_params(&self, _f: &mut dyn FnMut(&str, &Param<S>)) {}
    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Param<S>)) {}
}

impl<S: Scalar> UnaryLayer<S> for LeakyRelu<S> {
    fn forward(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        Ok(leaky_relu(x, self.slope))
    }

    fn backward(&mut self, x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        leaky_relu_backward(x, grad_out, self.slope)
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Fully connected layer on flat vectors (projection heads, t-embeddings).
#[derive(Debug, Clone)]
pub struct Linear<S> {
    /// Weights, dims `[out, in]`, row-major.
    pub w: Param<S>,
    /// Bias, dims `[out]`.
    pub b: Param<S>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Param::new(&[out_dim, in_dim]),
            b: Param::new(&[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn init_kaiming<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * self.in_dim as f64)).sqrt();
        let std = S::cast(std);
        for v in self.w.value.iter_mut() {
            *v = S::standard_normal(rng) * std;
        }
    }

    pub fn forward_vec(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.in_dim {
            return Err(CoreError::DataLength {
                what: "Linear::forward_vec",
                expected: self.in_dim,
                got: x.len(),
            });
        }
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w.value[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b.value[o];
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            y.push(acc);
        }
        Ok(y)
    }

    pub fn backward_vec(&mut self, x: &[S], grad_out: &[S]) -> Result<Vec<S>> {
        if grad_out.len() != self.out_dim {
            return Err(CoreError::DataLength {
                what: "Linear::backward_vec",
                expected: self.out_dim,
                got: grad_out.len(),
            });
        }
        let mut gin = vec![S::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o];
            self.b.grad[o] += g;
            let wrow = &self.w.value[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut self.w.grad[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gin[i] += g * wrow[i];
            }
        }
        Ok(gin)
    }
}

impl<S: Scalar> Parameterized<S> for Linear<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// conv → leaky-ReLU → conv plus identity skip; channel count preserved.
#[derive(Debug, Clone)]
pub struct ResBlock<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub slope: S,
}

impl<S: Scalar> ResBlock<S> {
    pub fn new(channels: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(channels, channels, 3, 1, 1),
            conv2: Conv2d::new(channels, channels, 3, 1, 1),
            slope: S::cast(LEAKY_SLOPE),
        }
    }

    pub fn init_kaiming<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv1.init_kaiming(rng);
        self.conv2.init_kaiming(rng);
    }

    pub fn forward(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        let h = self.conv1.forward(x)?;
        let a = leaky_relu(&h, self.slope);
        let r = self.conv2.forward(&a)?;
        x.add(&r)
    }

    /// Backward from the block input and the upstream gradient. The one
    /// intermediate (conv1 output) is recomputed; it is a single cheap conv.
    pub fn backward(&mut self, x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        let h = self.conv1.forward(x)?;
        let a = leaky_relu(&h, self.slope);
        let ga = self.conv2.backward(&a, grad_out)?;
        let gh = leaky_relu_backward(&h, &ga, self.slope)?;
        let gx = self.conv1.backward(x, &gh)?;
        grad_out.add(&gx)
    }
}

impl<S: Scalar> Parameterized<S> for ResBlock<S> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.conv1.visit_params(&mut |n, p| f(&format!("conv1.{n}"), p));
        self.conv2.visit_params(&mut |n, p| f(&format!("conv2.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.conv1
            .visit_params_mut(&mut |n, p| f(&format!("conv1.{n}"), p));
        self.conv2
            .visit_params_mut(&mut |n, p| f(&format!("conv2.{n}"), p));
    }
}

impl<S: Scalar> UnaryLayer<S> for ResBlock<S> {
    fn forward(&self, x: &Tensor3<S>) -> Result<Tensor3<S>> {
        ResBlock::forward(self, x)
    }

    fn backward(&mut self, x: &Tensor3<S>, grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
        ResBlock::backward(self, x, grad_out)
    }
}

// ---------------------------------------------------------------------------
// Pooling, softmax, upsampling
// ---------------------------------------------------------------------------

/// Global average pooling: one mean per channel.
pub fn gap<S: Scalar>(x: &Tensor3<S>) -> Vec<S> {
    let area = S::cast((x.height() * x.width()) as f64);
    (0..x.channels())
        .map(|c| {
            let mut acc = S::zero();
            for &v in x.channel(c) {
                acc += v;
            }
            acc / area
        })
        .collect()
}

pub fn gap_backward<S: Scalar>(
    grad: &[S],
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Tensor3<S>> {
    if grad.len() != channels {
        return Err(CoreError::DataLength {
            what: "gap_backward",
            expected: channels,
            got: grad.len(),
        });
    }
    let area = S::cast((height * width) as f64);
    let mut out = Tensor3::zeros(channels, height, width);
    for c in 0..channels {
        let g = grad[c] / area;
        out.channel_mut(c).fill(g);
    }
    Ok(out)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    if logits.is_empty() {
        return Vec::new();
    }
    let mut m = logits[0];
    for &v in logits {
        m = m.max(v);
    }
    let mut out: Vec<S> = logits.iter().map(|&v| (v - m).exp()).collect();
    let mut sum = S::zero();
    for &v in &out {
        sum += v;
    }
    for v in out.iter_mut() {
        *v = *v / sum;
    }
    out
}

/// Jacobian-vector product through softmax, given its output `y`.
pub fn softmax_backward<S: Scalar>(y: &[S], grad_out: &[S]) -> Result<Vec<S>> {
    if y.len() != grad_out.len() {
        return Err(CoreError::DataLength {
            what: "softmax_backward",
            expected: y.len(),
            got: grad_out.len(),
        });
    }
    let mut dot = S::zero();
    for (&yi, &gi) in y.iter().zip(grad_out) {
        dot += yi * gi;
    }
    Ok(y.iter()
        .zip(grad_out)
        .map(|(&yi, &gi)| yi * (gi - dot))
        .collect())
}

/// Window bounds of adaptive average pooling: output cell `i` of `out` covers
/// input rows/cols `[lo, hi)`. Windows overlap by at most one cell when the
/// sizes do not divide.
#[inline]
fn pool_window(i: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let lo = i * in_dim / out_dim;
    let hi = ((i + 1) * in_dim + out_dim - 1) / out_dim;
    (lo, hi)
}

/// Adaptive average pooling to an arbitrary (smaller or equal) spatial size.
pub fn adaptive_avg_pool<S: Scalar>(
    x: &Tensor3<S>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor3<S>> {
    if out_h == 0 || out_w == 0 || out_h > x.height() || out_w > x.width() {
        return Err(CoreError::InvalidArgument {
            what: "adaptive_avg_pool",
            detail: format!(
                "output {out_h}x{out_w} invalid for input {}x{}",
                x.height(),
                x.width()
            ),
        });
    }
    let mut out = Tensor3::zeros(x.channels(), out_h, out_w);
    for c in 0..x.channels() {
        for oy in 0..out_h {
            let (y_lo, y_hi) = pool_window(oy, x.height(), out_h);
            for ox in 0..out_w {
                let (x_lo, x_hi) = pool_window(ox, x.width(), out_w);
                let mut acc = S::zero();
                for y in y_lo..y_hi {
                    for &v in &x.row(c, y)[x_lo..x_hi] {
                        acc += v;
                    }
                }
                let count = S::cast(((y_hi - y_lo) * (x_hi - x_lo)) as f64);
                out.set(c, oy, ox, acc / count);
            }
        }
    }
    Ok(out)
}

/// Distributes each output-cell gradient uniformly over its input window.
pub fn adaptive_avg_pool_backward<S: Scalar>(
    grad_out: &Tensor3<S>,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor3<S>> {
    let (out_h, out_w) = (grad_out.height(), grad_out.width());
    if out_h > in_h || out_w > in_w {
        return Err(CoreError::InvalidArgument {
            what: "adaptive_avg_pool_backward",
            detail: format!("grad {out_h}x{out_w} larger than input {in_h}x{in_w}"),
        });
    }
    let mut grad_in = Tensor3::zeros(grad_out.channels(), in_h, in_w);
    for c in 0..grad_out.channels() {
        for oy in 0..out_h {
            let (y_lo, y_hi) = pool_window(oy, in_h, out_h);
            for ox in 0..out_w {
                let (x_lo, x_hi) = pool_window(ox, in_w, out_w);
                let count = S::cast(((y_hi - y_lo) * (x_hi - x_lo)) as f64);
                let g = grad_out.at(c, oy, ox) / count;
                for y in y_lo..y_hi {
                    for v in &mut grad_in.row_mut(c, y)[x_lo..x_hi] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_nearest2<S: Scalar>(x: &Tensor3<S>) -> Tensor3<S> {
    let (c, h, w) = x.shape();
    let mut out = Tensor3::zeros(c, h * 2, w * 2);
    for ci in 0..c {
        for y in 0..h * 2 {
            let src = x.row(ci, y / 2);
            let dst = out.row_mut(ci, y);
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

/// Each input cell collects the gradients of the 2×2 outputs it fed.
pub fn upsample_nearest2_backward<S: Scalar>(grad_out: &Tensor3<S>) -> Result<Tensor3<S>> {
    let (c, h2, w2) = grad_out.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(CoreError::InvalidArgument {
            what: "upsample_nearest2_backward",
            detail: format!("gradient dims {h2}x{w2} must be even"),
        });
    }
    let mut grad_in = Tensor3::zeros(c, h2 / 2, w2 / 2);
    for ci in 0..c {
        for y in 0..h2 {
            let src = grad_out.row(ci, y);
            let dst = grad_in.row_mut(ci, y / 2);
            for (xo, &g) in src.iter().enumerate() {
                dst[xo / 2] += g;
            }
        }
    }
    Ok(grad_in)
}
