//! CSV writers for training logs and evaluation tables.
//!
//! Every writer goes through [`crate::fsutil::write_atomic`], and floats
//! are formatted with `Display` so values survive a parse round trip at
//! full precision (`inf` for infinite PSNR on identical images).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fsutil::write_atomic;
use crate::trainer::LossRow;

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::from("epoch,step,l_gan,l_nce,l_diff,total\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.step, r.l_gan, r.l_nce, r.l_diff, r.total
        );
    }
    write_atomic(path, out.as_bytes())
}

/// One evaluated image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from("name,psnr,ssim\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.name, r.psnr, r.ssim);
    }
    write_atomic(path, out.as_bytes())
}

/// One scene of the dark-channel swap experiment: mean dark channel of the
/// hazy image, the clear image, and the hazy image wearing the clear
/// amplitude, plus whether that synthesis landed closer to the clear one.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapRow {
    pub name: String,
    pub hazy_dc: f64,
    pub clear_dc: f64,
    pub syn_dc: f64,
    pub closer: &'static str,
}

pub fn write_swap_csv(path: &Path, rows: &[SwapRow]) -> Result<()> {
    let mut out = String::from("name,hazy_dc,clear_dc,syn_dc,closer\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.name, r.hazy_dc, r.clear_dc, r.syn_dc, r.closer
        );
    }
    write_atomic(path, out.as_bytes())
}

/// 16-bin dark-channel histograms for the three populations of the swap
/// experiment, one row per bin.
pub fn write_hist_csv(
    path: &Path,
    hazy: &[u64; 16],
    clear: &[u64; 16],
    syn: &[u64; 16],
) -> Result<()> {
    let mut out = String::from("bin,hazy,clear,syn\n");
    for b in 0..16 {
        let _ = writeln!(out, "{},{},{},{}", b, hazy[b], clear[b], syn[b]);
    }
    write_atomic(path, out.as_bytes())
}

/// Dark-channel means without the synthesis column (`synclear off`).
pub fn write_dc_csv(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let mut out = String::from("name,hazy_dc,clear_dc\n");
    for (name, h, c) in rows {
        let _ = writeln!(out, "{},{},{}", name, h, c);
    }
    write_atomic(path, out.as_bytes())
}

/// Two-population histogram (`synclear off`).
pub fn write_hist2_csv(path: &Path, hazy: &[u64; 16], clear: &[u64; 16]) -> Result<()> {
    let mut out = String::from("bin,hazy,clear\n");
    for b in 0..16 {
        let _ = writeln!(out, "{},{},{}", b, hazy[b], clear[b]);
    }
    write_atomic(path, out.as_bytes())
}

/// Centered-start moving average used when eyeballing loss curves; the
/// first `window - 1` outputs average the shorter available prefix.
pub fn smoothed(xs: &[f32], window: usize) -> Vec<f32> {
    assert!(window > 0, "smoothing window must be positive");
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        acc += x as f64;
        if i >= window {
            acc -= xs[i - window] as f64;
        }
        let n = (i + 1).min(window);
        out.push((acc / n as f64) as f32);
    }
    out
}
