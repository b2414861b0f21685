//! Evaluation: PSNR, SSIM, dark-channel statistics and the amplitude-swap
//! experiment that motivates the whole pipeline (swapping a hazy image's
//! amplitude spectrum for a clear one's removes most of the haze).
//!
//! Histogram and threshold statistics use the 8-bit convention: values are
//! quantized to 0..=255 (round half up) and bucketed 16 levels per bin.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::error::{CoreError, Result};
use crate::nn::clamp01;
use crate::scalar::Scalar;
use crate::spectral::swap_amplitude;
use crate::tensor::Tensor3;

/// Peak signal-to-noise ratio in dB: 10·log10(peak²/MSE). Identical inputs
/// (MSE = 0) return +∞.
pub fn psnr<S: Scalar>(x: &Tensor3<S>, y: &Tensor3<S>, peak: f64) -> Result<S> {
    x.ensure_same_shape(y, "psnr")?;
    if x.is_empty() {
        return Err(CoreError::InvalidArgument {
            what: "psnr",
            detail: alloc::format!("empty tensors"),
        });
    }
    let mut acc = 0.0f64;
    for (&a, &b) in x.as_slice().iter().zip(y.as_slice()) {
        let d = a.as_f64() - b.as_f64();
        acc += d * d;
    }
    let mse = acc / x.len() as f64;
    if mse == 0.0 {
        return Ok(S::infinity());
    }
    Ok(S::cast(10.0 * (peak * peak / mse).log10()))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut k = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let v = (-((dy * dy + dx * dx) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k.push(v);
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn luminance<S: Scalar>(img: &Tensor3<S>) -> Result<Vec<f64>> {
    let plane = img.height() * img.width();
    match img.channels() {
        1 => Ok(img.as_slice().iter().map(|v| v.as_f64()).collect()),
        3 => {
            let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
            let mut out = Vec::with_capacity(plane);
            for i in 0..plane {
                out.push(0.299 * r[i].as_f64() + 0.587 * g[i].as_f64() + 0.114 * b[i].as_f64());
            }
            Ok(out)
        }
        c => Err(CoreError::InvalidArgument {
            what: "ssim luminance",
            detail: alloc::format!("expected 1 or 3 channels, got {c}"),
        }),
    }
}

/// Mean structural similarity over valid (unpadded) 11×11 Gaussian windows
/// (σ = 1.5) on Rec.601 luminance, with the standard stabilizers
/// C1 = (0.01·peak)², C2 = (0.03·peak)².
pub fn ssim<S: Scalar>(x: &Tensor3<S>, y: &Tensor3<S>, peak: f64) -> Result<S> {
    x.ensure_same_shape(y, "ssim")?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidArgument {
            what: "ssim",
            detail: alloc::format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let lx = luminance(x)?;
    let ly = luminance(y)?;
    let win = gaussian_window();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let (out_h, out_w) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0f64;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (mut mx, mut my) = (0.0, 0.0);
            let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
            let mut wi = 0;
            for dy in 0..SSIM_WINDOW {
                let row = (oy + dy) * w + ox;
                for dx in 0..SSIM_WINDOW {
                    let (a, b) = (lx[row + dx], ly[row + dx]);
                    let k = win[wi];
                    wi += 1;
                    mx += k * a;
                    my += k * b;
                    xx += k * a * a;
                    yy += k * b * b;
                    xy += k * a * b;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
        }
    }
    Ok(S::cast(total / (out_h * out_w) as f64))
}

/// Dark channel: per-pixel minimum over channels and over an odd-sized
/// window clamped at the borders (map dims equal image dims).
pub fn dark_channel<S: Scalar>(image: &Tensor3<S>, patch: usize) -> Result<Tensor3<S>> {
    let (c, h, w) = image.shape();
    if c == 0 || h == 0 || w == 0 {
        return Err(CoreError::InvalidArgument {
            what: "dark_channel",
            detail: alloc::format!("empty image {:?}", image.shape()),
        });
    }
    if patch % 2 == 0 {
        return Err(CoreError::InvalidArgument {
            what: "dark_channel",
            detail: alloc::format!("patch must be odd, got {patch}"),
        });
    }
    if patch > h || patch > w {
        return Err(CoreError::InvalidArgument {
            what: "dark_channel",
            detail: alloc::format!("patch {patch} larger than image {h}x{w}"),
        });
    }
    let r = patch / 2;
    // Channel minimum, then separable clamped-window minima (rows, columns).
    let plane = h * w;
    let mut minc = image.channel(0).to_vec();
    for ci in 1..c {
        for (m, &v) in minc.iter_mut().zip(image.channel(ci)) {
            if v < *m {
                *m = v;
            }
        }
    }
    let mut rows = vec![S::zero(); plane];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            let mut m = minc[y * w + lo];
            for &v in &minc[y * w + lo + 1..y * w + hi] {
                if v < m {
                    m = v;
                }
            }
            rows[y * w + x] = m;
        }
    }
    let mut out = vec![S::zero(); plane];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            let mut m = rows[lo * w + x];
            for yy in lo + 1..hi {
                let v = rows[yy * w + x];
                if v < m {
                    m = v;
                }
            }
            out[y * w + x] = m;
        }
    }
    Tensor3::from_vec(1, h, w, out)
}

/// Quantize a unit-range value to 0..=255, rounding half up.
pub fn quantize8<S: Scalar>(v: S) -> usize {
    let q = (v.as_f64() * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as usize
}

/// 16-bin histogram over unit-range values, 16 intensity levels per bin.
pub fn histogram16<S: Scalar>(values: &[S]) -> [u64; 16] {
    let mut bins = [0u64; 16];
    for &v in values {
        bins[quantize8(v) >> 4] += 1;
    }
    bins
}

/// Fraction of values whose 8-bit quantization falls below `level`.
pub fn below_fraction<S: Scalar>(values: &[S], level: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.iter().filter(|&&v| quantize8(v) < level).count();
    n as f64 / values.len() as f64
}

/// 8-bit threshold below which dark-channel pixels count as "dark".
pub const DARK_LEVEL: usize = 25;

/// Amplitude-swap experiment over paired sets: per-pair mean dark channels
/// of the hazy, clear and synthesized-clear images, pooled dark-channel
/// histograms, below-threshold masses, and the fraction of pairs where the
/// synthesized image's mean dark channel lands strictly closer to the clear
/// one's than the hazy one's does.
#[derive(Debug, Clone)]
pub struct SwapExperimentReport<S> {
    pub hazy_mean_dc: Vec<S>,
    pub clear_mean_dc: Vec<S>,
    pub syn_mean_dc: Vec<S>,
    pub hazy_hist: [u64; 16],
    pub clear_hist: [u64; 16],
    pub syn_hist: [u64; 16],
    pub hazy_below: f64,
    pub clear_below: f64,
    pub syn_below: f64,
    pub closeness_fraction: f64,
}

impl<S> SwapExperimentReport<S> {
    pub fn pairs(&self) -> usize {
        self.hazy_mean_dc.len()
    }
}

/// Distance ties below this count as "closer", so the degenerate self-swap
/// (both distances at float-noise level) reports full closeness.
const CLOSENESS_EPS: f64 = 1e-12;

/// Runs the swap experiment: SynClear is each hazy image with its amplitude
/// spectrum replaced by the paired clear image's (clamped back to unit
/// range), and dark channels use the given window.
pub fn swap_experiment<S: Scalar>(
    hazy: &[Tensor3<S>],
    clear: &[Tensor3<S>],
    patch: usize,
) -> Result<SwapExperimentReport<S>> {
    if hazy.is_empty() || hazy.len() != clear.len() {
        return Err(CoreError::InvalidArgument {
            what: "swap_experiment",
            detail: alloc::format!(
                "need equal non-empty sets, got {} hazy vs {} clear",
                hazy.len(),
                clear.len()
            ),
        });
    }
    let n = hazy.len();
    let mut report = SwapExperimentReport {
        hazy_mean_dc: Vec::with_capacity(n),
        clear_mean_dc: Vec::with_capacity(n),
        syn_mean_dc: Vec::with_capacity(n),
        hazy_hist: [0; 16],
        clear_hist: [0; 16],
        syn_hist: [0; 16],
        hazy_below: 0.0,
        clear_below: 0.0,
        syn_below: 0.0,
        closeness_fraction: 0.0,
    };
    let mut pooled_h: Vec<S> = Vec::new();
    let mut pooled_c: Vec<S> = Vec::new();
    let mut pooled_s: Vec<S> = Vec::new();
    let mut closer = 0usize;
    for (ih, ic) in hazy.iter().zip(clear) {
        let syn = clamp01(&swap_amplitude(ih, ic)?);
        let dc_h = dark_channel(ih, patch)?;
        let dc_c = dark_channel(ic, patch)?;
        let dc_s = dark_channel(&syn, patch)?;
        let (mh, mc, ms) = (dc_h.mean(), dc_c.mean(), dc_s.mean());
        report.hazy_mean_dc.push(mh);
        report.clear_mean_dc.push(mc);
        report.syn_mean_dc.push(ms);
        let d_hazy = (mh.as_f64() - mc.as_f64()).abs();
        let d_syn = (ms.as_f64() - mc.as_f64()).abs();
        if d_syn < d_hazy || (d_syn - d_hazy).abs() <= CLOSENESS_EPS {
            closer += 1;
        }
        pooled_h.extend_from_slice(dc_h.as_slice());
        pooled_c.extend_from_slice(dc_c.as_slice());
        pooled_s.extend_from_slice(dc_s.as_slice());
    }
    report.hazy_hist = histogram16(&pooled_h);
    report.clear_hist = histogram16(&pooled_c);
    report.syn_hist = histogram16(&pooled_s);
    report.hazy_below = below_fraction(&pooled_h, DARK_LEVEL);
    report.clear_below = below_fraction(&pooled_c, DARK_LEVEL);
    report.syn_below = below_fraction(&pooled_s, DARK_LEVEL);
    report.closeness_fraction = closer as f64 / n as f64;
    Ok(report)
}
