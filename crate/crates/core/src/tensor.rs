//! Dense channels×height×width tensors and learnable parameters.
//!
//! [`Tensor3`] is the universal carrier: RGB images (values in [0,1]),
//! feature maps, amplitude/phase planes and amplitude residuals all use it.
//! Storage is row-major per channel: `data[c*h*w + y*w + x]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// A dense real-valued tensor with shape channels × height × width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<S> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    /// All-zero tensor of the given shape.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![S::zero(); channels * height * width],
        }
    }

    /// Constant tensor of the given shape.
    pub fn filled(channels: usize, height: usize, width: usize, value: S) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Wrap an existing buffer; the length must match the shape exactly.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(CoreError::DataLength {
                what: "Tensor3::from_vec",
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    /// Tensor with every entry drawn from N(0, 1).
    pub fn randn<R: Rng + ?Sized>(channels: usize, height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..channels * height * width)
            .map(|_| S::standard_normal(rng))
            .collect();
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    /// Tensor with every entry drawn from U[0, 1).
    pub fn rand_unit<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..channels * height * width)
            .map(|_| S::unit_uniform(rng))
            .collect();
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    /// One image row of one channel, as a slice.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[S] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [S] {
        let start = (c * self.height + y) * self.width;
        &mut self.data[start..start + self.width]
    }

    /// All entries of one channel.
    #[inline]
    pub fn channel(&self, c: usize) -> &[S] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Error unless `other` has the same shape; `what` names the operation.
    pub fn ensure_same_shape(&self, other: &Tensor3<S>, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                what,
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor3<S> {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor3<S>, f: impl Fn(S, S) -> S) -> Result<Tensor3<S>> {
        self.ensure_same_shape(other, "Tensor3::zip_map")?;
        Ok(Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3<S>) -> Result<Tensor3<S>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Tensor3<S> {
        self.map(|v| v * k)
    }

    pub fn add_in_place(&mut self, other: &Tensor3<S>) -> Result<()> {
        self.ensure_same_shape(other, "Tensor3::add_in_place")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// `self += k * other` without allocating.
    pub fn axpy(&mut self, k: S, other: &Tensor3<S>) -> Result<()> {
        self.ensure_same_shape(other, "Tensor3::axpy")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, k: S) {
        for v in self.data.iter_mut() {
            *v *= k;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    pub fn sum(&self) -> S {
        let mut acc = S::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> S {
        self.sum() / S::cast(self.data.len() as f64)
    }

    pub fn abs_max(&self) -> S {
        let mut m = S::zero();
        for &v in &self.data {
            m = m.max(v.abs());
        }
        m
    }

    pub fn sqr_sum(&self) -> S {
        let mut acc = S::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error naming `what` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite {
                what: format!("{what} ({}x{}x{})", self.channels, self.height, self.width),
            })
        }
    }

    /// Precision change (f32 ↔ f64) via f64.
    pub fn cast<T: Scalar>(&self) -> Tensor3<T> {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| T::cast(v.as_f64())).collect(),
        }
    }
}

/// A learnable parameter: flat storage plus its dims and gradient accumulator.
///
/// Convolution kernels store dims `[out_c, in_c, k, k]`, biases `[out_c]`,
/// linear weights `[out, in]`. The flat layout matches the checkpoint format
/// and lets the optimizer treat every parameter uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: Vec<S>,
    pub grad: Vec<S>,
    pub dims: Vec<usize>,
}

impl<S: Scalar> Param<S> {
    /// Zero-valued parameter of the given dims.
    pub fn new(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Param {
            value: vec![S::zero(); n],
            grad: vec![S::zero(); n],
            dims: dims.to_vec(),
        }
    }

    pub fn from_values(dims: &[usize], value: Vec<S>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if value.len() != n {
            return Err(CoreError::DataLength {
                what: "Param::from_values",
                expected: n,
                got: value.len(),
            });
        }
        Ok(Param {
            grad: vec![S::zero(); n],
            value,
            dims: dims.to_vec(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.value.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    /// Error naming the parameter if its gradient has gone non-finite.
    pub fn ensure_grad_finite(&self, name: &str) -> Result<()> {
        if self.grad.iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::NonFinite {
                what: format!("gradient of {name}"),
            })
        }
    }
}
