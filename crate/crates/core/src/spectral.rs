//! Per-channel 2D discrete Fourier transforms, amplitude/phase decomposition
//! and recomposition, and amplitude exchange between images.
//!
//! Conventions, fixed once for the whole toolkit:
//! - forward transform is unnormalized, the inverse carries 1/(H·W);
//! - the DC term sits at index (0,0) — nothing is fftshifted;
//! - the phase of a zero-amplitude bin is 0 (`atan2(0,0)` convention).
//!
//! The engine is an iterative radix-2 Cooley-Tukey for power-of-two lengths
//! and Bluestein's chirp-z algorithm for everything else, so arbitrary image
//! sizes transform exactly (no padding, no cropping). Twiddle and chirp
//! tables are computed in `f64` regardless of the working precision.
//!
//! Callers split into two groups: image-level statistics (amplitude swaps on
//! 3-channel RGB in [0,1]) and feature-level spectra (the C-channel editing
//! layer inside the network). Both use exactly these functions; only the
//! tensor contents differ.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Relative imaginary residue above which an inverse transform is rejected
/// instead of discarded: the spectrum was not conjugate-symmetric.
pub const RESIDUE_LIMIT: f64 = 1e-3;

/// Amplitude floor below which phase gradients are frozen; the phase of an
/// (almost) zero bin is arbitrary and its derivative blows up as 1/A².
const PHASE_GRAD_FLOOR: f64 = 1e-8;

/// Complex spectrum of a [`Tensor3`], stored as split real/imaginary planes
/// in the same channel-major, row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<S> {
    channels: usize,
    height: usize,
    width: usize,
    pub re: Vec<S>,
    pub im: Vec<S>,
}

impl<S: Scalar> ComplexSpectrum<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let n = channels * height * width;
        ComplexSpectrum {
            channels,
            height,
            width,
            re: vec![S::zero(); n],
            im: vec![S::zero(); n],
        }
    }

    pub fn from_parts(
        channels: usize,
        height: usize,
        width: usize,
        re: Vec<S>,
        im: Vec<S>,
    ) -> Result<Self> {
        let n = channels * height * width;
        if re.len() != n || im.len() != n {
            return Err(CoreError::DataLength {
                what: "ComplexSpectrum::from_parts",
                expected: n,
                got: re.len().max(im.len()),
            });
        }
        Ok(ComplexSpectrum {
            channels,
            height,
            width,
            re,
            im,
        })
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
    pub fn idx(&self, c: usize, u: usize, v: usize) -> usize {
        (c * self.height + u) * self.width + v
    }

    #[inline]
    pub fn at(&self, c: usize, u: usize, v: usize) -> Complex<S> {
        let i = self.idx(c, u, v);
        Complex::new(self.re[i], self.im[i])
    }

    /// Σ |F|² over one channel (for Parseval-style accounting).
    pub fn power(&self, c: usize) -> S {
        let plane = self.height * self.width;
        let mut acc = S::zero();
        for i in c * plane..(c + 1) * plane {
            acc += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        acc
    }
}

/// Amplitude and phase planes of a spectrum. Amplitude is non-negative;
/// phase lies in (−π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct AmpPhase<S> {
    pub amplitude: Tensor3<S>,
    pub phase: Tensor3<S>,
}

// ---------------------------------------------------------------------------
// 1D engine
// ---------------------------------------------------------------------------

/// Transform plan for one length: radix-2 for powers of two, Bluestein's
/// chirp-z (running on an internal power-of-two FFT) otherwise.
struct Plan<S> {
    n: usize,
    kind: PlanKind<S>,
}

enum PlanKind<S> {
    Pow2 {
        /// e^(−2πi k/n) for k < n/2.
        twiddle: Vec<Complex<S>>,
    },
    Bluestein {
        /// Internal FFT length: smallest power of two ≥ 2n − 1.
        m: usize,
        /// Chirp a_k = e^(−iπ k²/n) for k < n.
        chirp: Vec<Complex<S>>,
        /// FFT_m of the circularly wrapped conjugate chirp.
        bfft: Vec<Complex<S>>,
        /// Twiddles of the internal length-m FFT.
        m_twiddle: Vec<Complex<S>>,
    },
}

fn unit_angle<S: Scalar>(theta: f64) -> Complex<S> {
    Complex::new(S::cast(theta.cos()), S::cast(theta.sin()))
}

fn pow2_twiddles<S: Scalar>(n: usize) -> Vec<Complex<S>> {
    (0..n / 2)
        .map(|k| unit_angle(-2.0 * core::f64::consts::PI * k as f64 / n as f64))
        .collect()
}

/// In-place iterative radix-2 FFT; `n` must be a power of two.
/// No normalization in either direction.
fn fft_pow2<S: Scalar>(buf: &mut [Complex<S>], twiddle: &[Complex<S>], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let mut tw = twiddle[k * step];
                if inverse {
                    tw = tw.conj();
                }
                let a = buf[start + k];
                let b = buf[start + k + half] * tw;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

impl<S: Scalar> Plan<S> {
    fn new(n: usize) -> Self {
        assert!(n >= 1, "transform length must be positive");
        if n.is_power_of_two() {
            return Plan {
                n,
                kind: PlanKind::Pow2 {
                    twiddle: pow2_twiddles(n),
                },
            };
        }
        let m = (2 * n - 1).next_power_of_two();
        // Angles via k² mod 2n keep the argument small; e^(−iπ(k²+2nt)/n)
        // equals e^(−iπ k²/n) for any integer t.
        let chirp: Vec<Complex<S>> = (0..n)
            .map(|k| {
                let sq = ((k as u64 * k as u64) % (2 * n as u64)) as f64;
                unit_angle(-core::f64::consts::PI * sq / n as f64)
            })
            .collect();
        let m_twiddle = pow2_twiddles(m);
        let mut b = vec![Complex::new(S::zero(), S::zero()); m];
        for k in 0..n {
            let v = chirp[k].conj();
            b[k] = v;
            if k > 0 {
                b[m - k] = v;
            }
        }
        fft_pow2(&mut b, &m_twiddle, false);
        Plan {
            n,
            kind: PlanKind::Bluestein {
                m,
                chirp,
                bfft: b,
                m_twiddle,
            },
        }
    }

    /// Unnormalized transform of one length-n line, in place.
    fn execute(&self, buf: &mut [Complex<S>], inverse: bool) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kind {
            PlanKind::Pow2 { twiddle } => fft_pow2(buf, twiddle, inverse),
            PlanKind::Bluestein {
                m,
                chirp,
                bfft,
                m_twiddle,
            } => {
                // Inverse = conj ∘ forward ∘ conj (still unnormalized).
                if inverse {
                    for v in buf.iter_mut() {
                        *v = v.conj();
                    }
                }
                let mut work = vec![Complex::new(S::zero(), S::zero()); *m];
                for (k, v) in buf.iter().enumerate() {
                    work[k] = *v * chirp[k];
                }
                fft_pow2(&mut work, m_twiddle, false);
                for (w, &b) in work.iter_mut().zip(bfft.iter()) {
                    *w = *w * b;
                }
                fft_pow2(&mut work, m_twiddle, true);
                let scale = S::cast(1.0 / *m as f64);
                for (k, v) in buf.iter_mut().enumerate() {
                    *v = work[k] * chirp[k] * scale;
                }
                if inverse {
                    for v in buf.iter_mut() {
                        *v = v.conj();
                    }
                }
            }
        }
    }
}

/// Unnormalized 2D transform of one channel buffer (rows, then columns).
fn transform_channel<S: Scalar>(
    buf: &mut [Complex<S>],
    height: usize,
    width: usize,
    plan_h: &Plan<S>,
    plan_w: &Plan<S>,
    inverse: bool,
) {
    for row in buf.chunks_mut(width) {
        plan_w.execute(row, inverse);
    }
    let mut col = vec![Complex::new(S::zero(), S::zero()); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        plan_h.execute(&mut col, inverse);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
}

fn transform_spectrum<S: Scalar>(spec: &ComplexSpectrum<S>, inverse: bool) -> ComplexSpectrum<S> {
    let (c, h, w) = spec.shape();
    let plan_h = Plan::new(h);
    let plan_w = Plan::new(w);
    let mut out = ComplexSpectrum::zeros(c, h, w);
    let plane = h * w;
    let mut buf = vec![Complex::new(S::zero(), S::zero()); plane];
    for ci in 0..c {
        for i in 0..plane {
            let j = ci * plane + i;
            buf[i] = Complex::new(spec.re[j], spec.im[j]);
        }
        transform_channel(&mut buf, h, w, &plan_h, &plan_w, inverse);
        for i in 0..plane {
            let j = ci * plane + i;
            out.re[j] = buf[i].re;
            out.im[j] = buf[i].im;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Public transforms
// ---------------------------------------------------------------------------

/// Unnormalized forward DFT, independently per channel. DC at (0,0).
pub fn dft2<S: Scalar>(input: &Tensor3<S>) -> ComplexSpectrum<S> {
    let (c, h, w) = input.shape();
    let spec = ComplexSpectrum {
        channels: c,
        height: h,
        width: w,
        re: input.as_slice().to_vec(),
        im: vec![S::zero(); c * h * w],
    };
    transform_spectrum(&spec, false)
}

/// Inverse DFT with 1/(H·W) normalization.
///
/// The imaginary part is a residue: small residues (float noise from a
/// conjugate-symmetric spectrum) are discarded, anything above
/// [`RESIDUE_LIMIT`] relative to the signal norm is an error, because it
/// means the spectrum was edited into something with no real preimage.
pub fn idft2<S: Scalar>(spec: &ComplexSpectrum<S>) -> Result<Tensor3<S>> {
    let (t, residue) = idft2_with_residue(spec);
    if residue > RESIDUE_LIMIT {
        return Err(CoreError::ImaginaryResidue {
            residue,
            limit: RESIDUE_LIMIT,
        });
    }
    Ok(t)
}

/// Inverse DFT returning the real part plus the relative imaginary residue
/// (L2 of the discarded imaginary plane over L2 of the full signal).
pub fn idft2_with_residue<S: Scalar>(spec: &ComplexSpectrum<S>) -> (Tensor3<S>, f64) {
    let (c, h, w) = spec.shape();
    let inv = transform_spectrum(spec, true);
    let norm = S::cast(1.0 / (h * w) as f64);
    let mut re = Vec::with_capacity(c * h * w);
    let mut im_sq = 0.0f64;
    let mut total_sq = 0.0f64;
    for i in 0..inv.re.len() {
        let r = inv.re[i] * norm;
        let m = inv.im[i] * norm;
        re.push(r);
        let (rf, mf) = (r.as_f64(), m.as_f64());
        im_sq += mf * mf;
        total_sq += rf * rf + mf * mf;
    }
    let residue = if total_sq > 0.0 {
        (im_sq / total_sq).sqrt()
    } else {
        0.0
    };
    let t = Tensor3::from_vec(c, h, w, re).expect("idft2 buffer length");
    (t, residue)
}

/// Adjoint of [`dft2`] (for backpropagation): maps a spectrum-space gradient
/// to an input-space gradient. Equals the real part of the unnormalized
/// inverse transform.
pub fn dft2_backward<S: Scalar>(grad: &ComplexSpectrum<S>) -> Tensor3<S> {
    let (c, h, w) = grad.shape();
    let inv = transform_spectrum(grad, true);
    Tensor3::from_vec(c, h, w, inv.re).expect("dft2_backward buffer length")
}

/// Adjoint of [`idft2`]'s real output (for backpropagation): maps a gradient
/// on the real image back to a spectrum gradient. Equals the forward
/// transform scaled by 1/(H·W).
pub fn idft2_backward<S: Scalar>(grad: &Tensor3<S>) -> ComplexSpectrum<S> {
    let (c, h, w) = grad.shape();
    let mut spec = dft2(grad);
    let norm = S::cast(1.0 / (h * w) as f64);
    for v in spec.re.iter_mut() {
        *v *= norm;
    }
    for v in spec.im.iter_mut() {
        *v *= norm;
    }
    ComplexSpectrum {
        channels: c,
        height: h,
        width: w,
        re: spec.re,
        im: spec.im,
    }
}

// ---------------------------------------------------------------------------
// Amplitude / phase
// ---------------------------------------------------------------------------

/// Split a spectrum into amplitude and phase planes.
pub fn decompose<S: Scalar>(spec: &ComplexSpectrum<S>) -> AmpPhase<S> {
    let (c, h, w) = spec.shape();
    let mut amp = Vec::with_capacity(spec.re.len());
    let mut phase = Vec::with_capacity(spec.re.len());
    for i in 0..spec.re.len() {
        let (re, im) = (spec.re[i], spec.im[i]);
        amp.push(re.hypot(im));
        phase.push(im.atan2(re));
    }
    AmpPhase {
        amplitude: Tensor3::from_vec(c, h, w, amp).expect("decompose amplitude length"),
        phase: Tensor3::from_vec(c, h, w, phase).expect("decompose phase length"),
    }
}

/// Rebuild a spectrum from amplitude and phase: re = A·cos P, im = A·sin P.
pub fn recompose<S: Scalar>(ap: &AmpPhase<S>) -> Result<ComplexSpectrum<S>> {
    ap.amplitude
        .ensure_same_shape(&ap.phase, "recompose amplitude vs phase")?;
    let (c, h, w) = ap.amplitude.shape();
    let mut re = Vec::with_capacity(ap.amplitude.len());
    let mut im = Vec::with_capacity(ap.amplitude.len());
    for (&a, &p) in ap.amplitude.as_slice().iter().zip(ap.phase.as_slice()) {
        if a < S::zero() {
            return Err(CoreError::InvalidArgument {
                what: "recompose",
                detail: alloc::format!("negative amplitude {a}"),
            });
        }
        re.push(a * p.cos());
        im.push(a * p.sin());
    }
    Ok(ComplexSpectrum {
        channels: c,
        height: h,
        width: w,
        re,
        im,
    })
}

/// Gradients of [`decompose`] back to the spectrum: given upstream gradients
/// on amplitude and phase, produce gradients on (re, im).
///
/// Near-zero-amplitude bins get zero gradient — the phase there is a
/// convention, not a differentiable quantity.
pub fn decompose_backward<S: Scalar>(
    spec: &ComplexSpectrum<S>,
    ap: &AmpPhase<S>,
    grad_amp: &Tensor3<S>,
    grad_phase: &Tensor3<S>,
) -> Result<ComplexSpectrum<S>> {
    grad_amp.ensure_same_shape(grad_phase, "decompose_backward grads")?;
    if grad_amp.shape() != spec.shape() {
        return Err(CoreError::ShapeMismatch {
            what: "decompose_backward spectrum vs grads",
            expected: spec.shape(),
            got: grad_amp.shape(),
        });
    }
    let floor = S::cast(PHASE_GRAD_FLOOR);
    let (c, h, w) = spec.shape();
    let n = spec.re.len();
    let mut gre = vec![S::zero(); n];
    let mut gim = vec![S::zero(); n];
    let amp = ap.amplitude.as_slice();
    let ga = grad_amp.as_slice();
    let gp = grad_phase.as_slice();
    for i in 0..n {
        let a = amp[i];
        if a <= floor {
            continue;
        }
        let (re, im) = (spec.re[i], spec.im[i]);
        let inv_a = S::one() / a;
        let inv_a2 = inv_a * inv_a;
        gre[i] = ga[i] * re * inv_a - gp[i] * im * inv_a2;
        gim[i] = ga[i] * im * inv_a + gp[i] * re * inv_a2;
    }
    ComplexSpectrum::from_parts(c, h, w, gre, gim)
}

/// Gradients of [`recompose`]: given the (A, P) it consumed and upstream
/// gradients on (re, im), produce gradients on amplitude and phase.
pub fn recompose_backward<S: Scalar>(
    ap: &AmpPhase<S>,
    grad_spec: &ComplexSpectrum<S>,
) -> Result<(Tensor3<S>, Tensor3<S>)> {
    if grad_spec.shape() != ap.amplitude.shape() {
        return Err(CoreError::ShapeMismatch {
            what: "recompose_backward",
            expected: ap.amplitude.shape(),
            got: grad_spec.shape(),
        });
    }
    let (c, h, w) = ap.amplitude.shape();
    let n = ap.amplitude.len();
    let mut ga = Vec::with_capacity(n);
    let mut gp = Vec::with_capacity(n);
    let amp = ap.amplitude.as_slice();
    let ph = ap.phase.as_slice();
    for i in 0..n {
        let (cosw, sinw) = (ph[i].cos(), ph[i].sin());
        let (gr, gi) = (grad_spec.re[i], grad_spec.im[i]);
        ga.push(gr * cosw + gi * sinw);
        gp.push(amp[i] * (gi * cosw - gr * sinw));
    }
    Ok((
        Tensor3::from_vec(c, h, w, ga).expect("recompose_backward ga length"),
        Tensor3::from_vec(c, h, w, gp).expect("recompose_backward gp length"),
    ))
}

/// Average a spectrum with its conjugate mirror, projecting onto the
/// subspace of spectra with real inverse transforms. Self-adjoint, so it is
/// its own backward pass.
pub fn symmetrize<S: Scalar>(spec: &ComplexSpectrum<S>) -> ComplexSpectrum<S> {
    let (c, h, w) = spec.shape();
    let mut out = ComplexSpectrum::zeros(c, h, w);
    let half = S::cast(0.5);
    for ci in 0..c {
        for u in 0..h {
            let mu = (h - u) % h;
            for v in 0..w {
                let mv = (w - v) % w;
                let i = spec.idx(ci, u, v);
                let j = spec.idx(ci, mu, mv);
                out.re[i] = (spec.re[i] + spec.re[j]) * half;
                out.im[i] = (spec.im[i] - spec.im[j]) * half;
            }
        }
    }
    out
}

/// Worst deviation from conjugate symmetry, |F[u,v] − conj(F[−u,−v])|, over
/// all bins and channels (diagnostic).
pub fn conjugate_symmetry_error<S: Scalar>(spec: &ComplexSpectrum<S>) -> f64 {
    let (c, h, w) = spec.shape();
    let mut worst = 0.0f64;
    for ci in 0..c {
        for u in 0..h {
            let mu = (h - u) % h;
            for v in 0..w {
                let mv = (w - v) % w;
                let i = spec.idx(ci, u, v);
                let j = spec.idx(ci, mu, mv);
                let dre = spec.re[i].as_f64() - spec.re[j].as_f64();
                let dim = spec.im[i].as_f64() + spec.im[j].as_f64();
                worst = worst.max((dre * dre + dim * dim).sqrt());
            }
        }
    }
    worst
}

/// Replace `content`'s amplitude spectrum with `amplitude_donor`'s, keeping
/// `content`'s phase. With a hazy content and a clear donor this builds the
/// "SynClear" image: haze lives in amplitude, structure in phase.
pub fn swap_amplitude<S: Scalar>(
    content: &Tensor3<S>,
    amplitude_donor: &Tensor3<S>,
) -> Result<Tensor3<S>> {
    content.ensure_same_shape(amplitude_donor, "swap_amplitude")?;
    let content_ap = decompose(&dft2(content));
    let donor_ap = decompose(&dft2(amplitude_donor));
    let mixed = AmpPhase {
        amplitude: donor_ap.amplitude,
        phase: content_ap.phase,
    };
    // Real content and donor give even amplitude and odd phase, so the mixed
    // spectrum stays conjugate-symmetric up to float noise and the inverse
    // transform's residue gate passes.
    idft2(&recompose(&mixed)?)
}
