//! Spectral engine tests against a naive O(n²) DFT oracle, plus the
//! algebraic identities the rest of the pipeline leans on: round trips,
//! Parseval, conjugate symmetry, adjoint pairs, and amplitude/phase
//! decomposition edge cases.

use freqdehaze_core::spectral::{
    conjugate_symmetry_error, decompose, decompose_backward, dft2, dft2_backward, idft2,
    idft2_backward, idft2_with_residue, recompose, recompose_backward, swap_amplitude,
    symmetrize, AmpPhase, ComplexSpectrum, RESIDUE_LIMIT,
};
use freqdehaze_core::gradcheck::central_diff;
use freqdehaze_core::rng::seeded_stream;
use freqdehaze_core::tensor::Tensor3;
use proptest::prelude::*;

/// Textbook O((HW)²) forward DFT, written independently of the library's
/// FFT so the two can disagree.
fn naive_dft2(x: &Tensor3<f64>) -> ComplexSpectrum<f64> {
    let (c, h, w) = x.shape();
    let mut re = vec![0.0; c * h * w];
    let mut im = vec![0.0; c * h * w];
    for ci in 0..c {
        for u in 0..h {
            for v in 0..w {
                let mut sr = 0.0;
                let mut si = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0
                            * core::f64::consts::PI
                            * (u as f64 * y as f64 / h as f64 + v as f64 * xx as f64 / w as f64);
                        let val = x.at(ci, y, xx);
                        sr += val * ang.cos();
                        si += val * ang.sin();
                    }
                }
                let i = (ci * h + u) * w + v;
                re[i] = sr;
                im[i] = si;
            }
        }
    }
    ComplexSpectrum::from_parts(c, h, w, re, im).unwrap()
}

fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor3<f64> {
    let mut rng = seeded_stream(seed, 11);
    Tensor3::randn(c, h, w, &mut rng)
}

fn spectrum_max_abs_diff(a: &ComplexSpectrum<f64>, b: &ComplexSpectrum<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.re.iter().zip(&b.re) {
        worst = worst.max((x - y).abs());
    }
    for (x, y) in a.im.iter().zip(&b.im) {
        worst = worst.max((x - y).abs());
    }
    worst
}

/// FFT must agree with the naive DFT on power-of-two and awkward
/// mixed-radix sizes alike (the latter exercise the Bluestein path).
#[test]
fn fft_matches_naive_dft_across_sizes() {
    for &(h, w) in &[
        (1usize, 1usize),
        (2, 2),
        (3, 3),
        (5, 7),
        (8, 8),
        (12, 12),
        (16, 16),
        (6, 10),
        (9, 4),
    ] {
        let x = random_image(2, h, w, 0x5EED + (h * 100 + w) as u64);
        let fast = dft2(&x);
        let slow = naive_dft2(&x);
        let scale = 1.0 + (h * w) as f64;
        let diff = spectrum_max_abs_diff(&fast, &slow);
        assert!(
            diff < 1e-9 * scale,
            "size {h}x{w}: max deviation {diff:.3e} from the naive DFT"
        );
    }
}

/// Hand-computed 2x2 transform: the four bins are the sum and the three
/// signed contrasts of the pixels.
#[test]
fn fft_2x2_hand_case() {
    let x = Tensor3::from_vec(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let f = dft2(&x);
    let expect = [(10.0, 0.0), (-2.0, 0.0), (-4.0, 0.0), (0.0, 0.0)];
    for (i, &(er, ei)) in expect.iter().enumerate() {
        assert!((f.re[i] - er).abs() < 1e-12, "re[{i}] = {}", f.re[i]);
        assert!((f.im[i] - ei).abs() < 1e-12, "im[{i}] = {}", f.im[i]);
    }
}

/// idft2(dft2(x)) reproduces x to near machine precision in f64.
#[test]
fn round_trip_is_identity() {
    let x = random_image(3, 12, 16, 42);
    let back = idft2(&dft2(&x)).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst < 1e-12, "round-trip deviation {worst:.3e}");
}

/// Energy conservation: sum x² equals (1/HW)·sum |F|² per channel.
#[test]
fn parseval_identity_holds() {
    let x = random_image(2, 9, 5, 7);
    let f = dft2(&x);
    let (h, w) = (x.height(), x.width());
    for c in 0..x.channels() {
        let spatial: f64 = x.channel(c).iter().map(|v| v * v).sum();
        let spectral = f.power(c) / (h * w) as f64;
        assert!(
            (spatial - spectral).abs() < 1e-9 * (1.0 + spatial),
            "channel {c}: {spatial} vs {spectral}"
        );
    }
}

/// Real input makes the spectrum conjugate-symmetric, and symmetrize is
/// then a no-op.
#[test]
fn real_input_spectrum_is_conjugate_symmetric() {
    let x = random_image(1, 8, 12, 99);
    let f = dft2(&x);
    assert!(conjugate_symmetry_error(&f) < 1e-10);
    let s = symmetrize(&f);
    assert!(spectrum_max_abs_diff(&f, &s) < 1e-10);
}

/// symmetrize output always satisfies the conjugate symmetry it enforces,
/// even for an arbitrary (asymmetric) complex input.
#[test]
fn symmetrize_output_is_symmetric() {
    let mut rng = seeded_stream(3, 11);
    let re = Tensor3::<f64>::randn(1, 6, 9, &mut rng).into_vec();
    let im = Tensor3::<f64>::randn(1, 6, 9, &mut rng).into_vec();
    let spec = ComplexSpectrum::from_parts(1, 6, 9, re, im).unwrap();
    assert!(conjugate_symmetry_error(&spec) > 0.1, "input should be asymmetric");
    let s = symmetrize(&spec);
    assert!(conjugate_symmetry_error(&s) < 1e-12);
}

/// symmetrize is its own adjoint: <sym(a), b> = <a, sym(b)> under the
/// real inner product on (re, im) pairs. The FCL backward pass relies on
/// reusing the forward routine for the gradient.
#[test]
fn symmetrize_is_self_adjoint() {
    let mut rng = seeded_stream(4, 11);
    let mk = |rng: &mut _| {
        let re = Tensor3::<f64>::randn(1, 5, 6, rng).into_vec();
        let im = Tensor3::<f64>::randn(1, 5, 6, rng).into_vec();
        ComplexSpectrum::from_parts(1, 5, 6, re, im).unwrap()
    };
    let a = mk(&mut rng);
    let b = mk(&mut rng);
    let dot = |x: &ComplexSpectrum<f64>, y: &ComplexSpectrum<f64>| -> f64 {
        x.re.iter().zip(&y.re).map(|(p, q)| p * q).sum::<f64>()
            + x.im.iter().zip(&y.im).map(|(p, q)| p * q).sum::<f64>()
    };
    let lhs = dot(&symmetrize(&a), &b);
    let rhs = dot(&a, &symmetrize(&b));
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

/// An inverse transform whose imaginary residue exceeds the limit is an
/// error naming the residue; just below the limit it passes.
#[test]
fn idft2_rejects_large_imaginary_residue() {
    let x = random_image(1, 4, 4, 5);
    let mut f = dft2(&x);
    // Corrupt one off-diagonal bin; its mirror no longer matches, so the
    // inverse picks up imaginary mass.
    let i = f.idx(0, 1, 2);
    f.im[i] += 40.0;
    let (_, residue) = idft2_with_residue(&f);
    assert!(residue > RESIDUE_LIMIT);
    let err = idft2(&f).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("imaginary"), "unexpected error: {msg}");
}

/// dft2_backward is the exact adjoint of dft2 under the real pairing, and
/// idft2_backward the adjoint of idft2.
#[test]
fn transforms_and_backwards_are_adjoint_pairs() {
    let x = random_image(1, 6, 8, 21);
    let mut rng = seeded_stream(22, 11);
    let gre = Tensor3::<f64>::randn(1, 6, 8, &mut rng).into_vec();
    let gim = Tensor3::<f64>::randn(1, 6, 8, &mut rng).into_vec();
    let gy = ComplexSpectrum::from_parts(1, 6, 8, gre, gim).unwrap();

    let fx = dft2(&x);
    let lhs: f64 = fx.re.iter().zip(&gy.re).map(|(a, b)| a * b).sum::<f64>()
        + fx.im.iter().zip(&gy.im).map(|(a, b)| a * b).sum::<f64>();
    let bx = dft2_backward(&gy);
    let rhs: f64 = x.as_slice().iter().zip(bx.as_slice()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "dft2 adjoint: {lhs} vs {rhs}");

    let g_spatial = Tensor3::<f64>::randn(1, 6, 8, &mut rng);
    let y = idft2_with_residue(&gy).0;
    let lhs2: f64 = y
        .as_slice()
        .iter()
        .zip(g_spatial.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    let bg = idft2_backward(&g_spatial);
    let rhs2: f64 = gy.re.iter().zip(&bg.re).map(|(a, b)| a * b).sum::<f64>()
        + gy.im.iter().zip(&bg.im).map(|(a, b)| a * b).sum::<f64>();
    assert!(
        (lhs2 - rhs2).abs() < 1e-9 * (1.0 + lhs2.abs()),
        "idft2 adjoint: {lhs2} vs {rhs2}"
    );
}

/// Amplitude is non-negative, the DC bin's amplitude is |sum of pixels|,
/// and a zero bin gets phase exactly 0.
#[test]
fn decompose_conventions() {
    let x = Tensor3::from_vec(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let ap = decompose(&dft2(&x));
    assert!(ap.amplitude.as_slice().iter().all(|&a| a >= 0.0));
    assert!((ap.amplitude.at(0, 0, 0) - 10.0).abs() < 1e-12);
    // Bin (1,1) is exactly zero for this input.
    assert_eq!(ap.phase.at(0, 1, 1), 0.0);
    // Negative real bins sit at phase pi.
    assert!((ap.phase.at(0, 0, 1).abs() - core::f64::consts::PI).abs() < 1e-12);
}

/// recompose(decompose(F)) = F, and negative amplitudes are rejected.
#[test]
fn recompose_round_trip_and_negative_rejection() {
    let x = random_image(2, 5, 5, 13);
    let f = dft2(&x);
    let ap = decompose(&f);
    let back = recompose(&ap).unwrap();
    assert!(spectrum_max_abs_diff(&f, &back) < 1e-10);

    let mut bad = AmpPhase {
        amplitude: ap.amplitude.clone(),
        phase: ap.phase.clone(),
    };
    bad.amplitude.set(0, 1, 1, -0.5);
    assert!(recompose(&bad).is_err());
}

/// decompose_backward agrees with central finite differences through a
/// random linear probe of (amplitude, phase).
#[test]
fn decompose_backward_matches_finite_differences() {
    let x = random_image(1, 4, 4, 31);
    let f = dft2(&x);
    let n = f.re.len();
    let mut rng = seeded_stream(32, 11);
    let pa = Tensor3::<f64>::randn(1, 4, 4, &mut rng);
    let pp = Tensor3::<f64>::randn(1, 4, 4, &mut rng);

    let mut flat: Vec<f64> = f.re.clone();
    flat.extend_from_slice(&f.im);
    let mut loss = |v: &[f64]| -> f64 {
        let spec =
            ComplexSpectrum::from_parts(1, 4, 4, v[..n].to_vec(), v[n..].to_vec()).unwrap();
        let ap = decompose(&spec);
        ap.amplitude
            .as_slice()
            .iter()
            .zip(pa.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + ap.phase
                .as_slice()
                .iter()
                .zip(pp.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    };
    let fd = central_diff(&mut loss, &flat, 1e-6);

    let ap = decompose(&f);
    let g = decompose_backward(&f, &ap, &pa, &pp).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        worst = worst.max((g.re[i] - fd[i]).abs());
        worst = worst.max((g.im[i] - fd[n + i]).abs());
    }
    assert!(worst < 1e-5, "max FD deviation {worst:.3e}");
}

/// recompose_backward agrees with central finite differences.
#[test]
fn recompose_backward_matches_finite_differences() {
    let x = random_image(1, 4, 4, 33);
    let ap = decompose(&dft2(&x));
    let n = ap.amplitude.len();
    let mut rng = seeded_stream(34, 11);
    let gre = Tensor3::<f64>::randn(1, 4, 4, &mut rng).into_vec();
    let gim = Tensor3::<f64>::randn(1, 4, 4, &mut rng).into_vec();
    let probe = ComplexSpectrum::from_parts(1, 4, 4, gre, gim).unwrap();

    let mut flat: Vec<f64> = ap.amplitude.as_slice().to_vec();
    flat.extend_from_slice(ap.phase.as_slice());
    let mut loss = |v: &[f64]| -> f64 {
        let cand = AmpPhase {
            amplitude: Tensor3::from_vec(1, 4, 4, v[..n].to_vec()).unwrap(),
            phase: Tensor3::from_vec(1, 4, 4, v[n..].to_vec()).unwrap(),
        };
        let spec = recompose(&cand).unwrap();
        spec.re.iter().zip(&probe.re).map(|(a, b)| a * b).sum::<f64>()
            + spec.im.iter().zip(&probe.im).map(|(a, b)| a * b).sum::<f64>()
    };
    let fd = central_diff(&mut loss, &flat, 1e-6);

    let (ga, gp) = recompose_backward(&ap, &probe).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        worst = worst.max((ga.as_slice()[i] - fd[i]).abs());
        worst = worst.max((gp.as_slice()[i] - fd[n + i]).abs());
    }
    assert!(worst < 1e-5, "max FD deviation {worst:.3e}");
}

/// Swapping an image's amplitude with itself reproduces the image, and a
/// genuine swap hands the result the donor's amplitude spectrum.
#[test]
fn swap_amplitude_identity_and_donor_amplitude() {
    let a = random_image(3, 8, 8, 71);
    let b = random_image(3, 8, 8, 72);

    let same = swap_amplitude(&a, &a).unwrap();
    let mut worst = 0.0f64;
    for (p, q) in a.as_slice().iter().zip(same.as_slice()) {
        worst = worst.max((p - q).abs());
    }
    assert!(worst < 1e-10, "self-swap deviation {worst:.3e}");

    let swapped = swap_amplitude(&a, &b).unwrap();
    let got = decompose(&dft2(&swapped));
    let want = decompose(&dft2(&b));
    let mut amp_dev = 0.0f64;
    for (p, q) in got
        .amplitude
        .as_slice()
        .iter()
        .zip(want.amplitude.as_slice())
    {
        amp_dev = amp_dev.max((p - q).abs());
    }
    assert!(amp_dev < 1e-8, "amplitude deviation {amp_dev:.3e}");
}

proptest! {
    /// Round trip across arbitrary (including prime) sizes in f64.
    #[test]
    fn prop_round_trip(h in 1usize..14, w in 1usize..14, seed in 0u64..1000) {
        let x = random_image(1, h, w, seed);
        let back = idft2(&dft2(&x)).unwrap();
        for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    /// Real inputs always yield conjugate-symmetric spectra.
    #[test]
    fn prop_real_input_symmetry(h in 1usize..12, w in 1usize..12, seed in 0u64..1000) {
        let x = random_image(1, h, w, seed.wrapping_mul(7919));
        prop_assert!(conjugate_symmetry_error(&dft2(&x)) < 1e-9);
    }

    /// Parseval holds for every size.
    #[test]
    fn prop_parseval(h in 1usize..12, w in 1usize..12, seed in 0u64..1000) {
        let x = random_image(1, h, w, seed.wrapping_add(17));
        let f = dft2(&x);
        let spatial: f64 = x.as_slice().iter().map(|v| v * v).sum();
        let spectral = f.power(0) / (h * w) as f64;
        prop_assert!((spatial - spectral).abs() < 1e-8 * (1.0 + spatial));
    }
}
