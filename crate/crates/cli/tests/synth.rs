//! The scattering compositor against hand-computed cases, plus the toy
//! dataset writer's determinism and its intended dark-channel signature.

use std::fs;
use std::path::Path;

use freqdehaze::image_io::load_image;
use freqdehaze::synth::{
    draw_haze_params, make_clear_scene, make_depth_map, make_toy_dataset, synthesize_haze,
    SceneSpec,
};
use freqdehaze_core::metrics::dark_channel;
use freqdehaze_core::rng::{seeded_stream, STREAM_SCENES};
use freqdehaze_core::Tensor3;

fn flat_scene(value: f32, h: usize, w: usize) -> Tensor3<f32> {
    Tensor3::from_vec(3, h, w, vec![value; 3 * h * w]).unwrap()
}

/// beta = 0 gives transmission 1 everywhere: the haze is a no-op.
#[test]
fn zero_beta_passes_the_scene_through() {
    let spec = SceneSpec {
        clear: flat_scene(0.3, 4, 5),
        depth: Tensor3::from_vec(1, 4, 5, (0..20).map(|i| i as f32 * 0.1).collect()).unwrap(),
        airlight: [0.9, 0.9, 0.9],
        beta: 0.0,
    };
    let out = synthesize_haze(&spec).unwrap();
    assert_eq!(out.as_slice(), spec.clear.as_slice());
}

/// At extreme optical depth the output converges to pure airlight.
#[test]
fn deep_haze_converges_to_airlight() {
    let spec = SceneSpec {
        clear: flat_scene(0.1, 3, 3),
        depth: Tensor3::from_vec(1, 3, 3, vec![50.0; 9]).unwrap(),
        airlight: [0.8, 0.75, 0.9],
        beta: 1.0,
    };
    let out = synthesize_haze(&spec).unwrap();
    for c in 0..3 {
        for &v in out.channel(c) {
            assert!((v - spec.airlight[c]).abs() < 1e-6, "channel {c}: {v}");
        }
    }
}

/// J = 0.2, A = 0.8 at transmission one half lands exactly between: 0.5.
#[test]
fn half_transmission_midpoint() {
    let d = std::f32::consts::LN_2; // exp(-1 * ln 2) = 0.5
    let spec = SceneSpec {
        clear: flat_scene(0.2, 2, 2),
        depth: Tensor3::from_vec(1, 2, 2, vec![d; 4]).unwrap(),
        airlight: [0.8, 0.8, 0.8],
        beta: 1.0,
    };
    let out = synthesize_haze(&spec).unwrap();
    for &v in out.as_slice() {
        assert!((v - 0.5).abs() < 1e-6, "got {v}");
    }
}

/// Every hazy pixel is a convex combination of scene and airlight.
#[test]
fn output_stays_in_the_convex_hull() {
    let mut rng = seeded_stream(90, STREAM_SCENES);
    let clear = make_clear_scene(16, 16, &mut rng);
    let params = draw_haze_params(&mut rng);
    let depth = make_depth_map(16, 16, params.d_max, &mut rng);
    let out = synthesize_haze(&SceneSpec {
        clear: clear.clone(),
        depth,
        airlight: params.airlight,
        beta: params.beta,
    })
    .unwrap();
    for c in 0..3 {
        let a = params.airlight[c];
        for (&j, &i) in clear.channel(c).iter().zip(out.channel(c)) {
            let (lo, hi) = (j.min(a), j.max(a));
            assert!(i >= lo - 1e-6 && i <= hi + 1e-6, "{i} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn scene_and_depth_ranges() {
    let mut rng = seeded_stream(91, STREAM_SCENES);
    let scene = make_clear_scene(20, 24, &mut rng);
    assert_eq!(scene.shape(), (3, 20, 24));
    assert!(scene.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let depth = make_depth_map(20, 24, 1.5, &mut rng);
    assert_eq!(depth.shape(), (1, 20, 24));
    let lo = depth.as_slice().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = depth.as_slice().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    assert!(lo.abs() < 1e-6, "normalized floor, got {lo}");
    assert!((hi - 1.5).abs() < 1e-4, "normalized ceiling, got {hi}");
}

#[test]
fn haze_parameter_ranges() {
    let mut rng = seeded_stream(92, STREAM_SCENES);
    for _ in 0..100 {
        let p = draw_haze_params(&mut rng);
        assert!((0.5..1.2).contains(&p.beta));
        assert!(p.airlight.iter().all(|a| (0.7..1.0).contains(a)));
        assert!((1.0..2.0).contains(&p.d_max));
    }
}

/// More scattering pulls the dark channel up (the haze signature the
/// evaluation side depends on).
#[test]
fn dark_channel_grows_with_beta() {
    let mut rng = seeded_stream(93, STREAM_SCENES);
    let clear = make_clear_scene(32, 32, &mut rng);
    let depth = make_depth_map(32, 32, 1.5, &mut rng);
    let dc_at = |beta: f32| -> f32 {
        let out = synthesize_haze(&SceneSpec {
            clear: clear.clone(),
            depth: depth.clone(),
            airlight: [0.85, 0.85, 0.85],
            beta,
        })
        .unwrap();
        dark_channel(&out, 7).unwrap().mean()
    };
    let (weak, strong) = (dc_at(0.3), dc_at(1.0));
    assert!(
        strong > weak + 0.05,
        "dark channel should rise with beta: {weak} -> {strong}"
    );
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toy_dataset_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    make_toy_dataset(&a, 77, 3, 16).unwrap();
    make_toy_dataset(&b, 77, 3, 16).unwrap();
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn toy_dataset_layout_and_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let index = make_toy_dataset(dir.path(), 5, 2, 16).unwrap();
    assert_eq!(index.hazy_paths.len(), 2);
    assert_eq!(index.clear_paths.len(), 2);
    let count = |sub: &str| fs::read_dir(dir.path().join(sub)).unwrap().count();
    assert_eq!(count("hazy"), 2);
    assert_eq!(count("clear"), 2);
    assert_eq!(count("gt"), 2);
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5, "header plus four scenes");
    assert!(manifest.starts_with("file,role,beta,"));
}

/// Haze raises each scene's dark channel above its haze-free original.
#[test]
fn hazy_split_is_darker_channel_elevated_over_gt() {
    let dir = tempfile::tempdir().unwrap();
    let index = make_toy_dataset(dir.path(), 6, 4, 32).unwrap();
    for hazy_path in &index.hazy_paths {
        let name = hazy_path.file_name().unwrap();
        let hazy = load_image(hazy_path).unwrap().to_tensor::<f32>();
        let gt = load_image(&dir.path().join("gt").join(name))
            .unwrap()
            .to_tensor::<f32>();
        let dc_h = dark_channel(&hazy, 7).unwrap().mean();
        let dc_g = dark_channel(&gt, 7).unwrap().mean();
        assert!(
            dc_h > dc_g,
            "{name:?}: hazy dc {dc_h} should exceed gt dc {dc_g}"
        );
    }
}

#[test]
fn compositor_validation_rejects_bad_specs() {
    let good = || SceneSpec {
        clear: flat_scene(0.5, 2, 2),
        depth: Tensor3::from_vec(1, 2, 2, vec![0.5; 4]).unwrap(),
        airlight: [0.8, 0.8, 0.8],
        beta: 1.0,
    };
    let mut s = good();
    s.beta = -0.1;
    assert!(synthesize_haze(&s).unwrap_err().to_string().contains("beta"));
    let mut s = good();
    s.airlight[1] = 1.5;
    assert!(synthesize_haze(&s).unwrap_err().to_string().contains("airlight"));
    let mut s = good();
    s.depth = Tensor3::from_vec(1, 3, 3, vec![0.5; 9]).unwrap();
    assert!(synthesize_haze(&s).unwrap_err().to_string().contains("depth shape"));
    let mut s = good();
    s.depth = Tensor3::from_vec(1, 2, 2, vec![0.5, -0.1, 0.5, 0.5]).unwrap();
    assert!(synthesize_haze(&s).unwrap_err().to_string().contains("negative"));
}

#[test]
fn too_few_scenes_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = make_toy_dataset(dir.path(), 1, 1, 16).unwrap_err();
    assert!(err.to_string().contains("at least 2"), "got {err}");
}
