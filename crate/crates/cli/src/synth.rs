//! Synthetic haze. Clear scenes are procedural (gradient base, random
//! shapes, a faint cosine texture), depth is a smooth random field, and the
//! compositor applies the atmospheric scattering model
//! `I = J * t + A * (1 - t)` with `t = exp(-beta * d)`,
//! so every hazy pixel is a convex combination of the scene and the
//! airlight. The toy dataset writer produces genuinely unpaired training
//! splits: the clear split comes from scenes the hazy split never saw.
//! Ground truth for the hazy split is kept in a separate `gt/` directory
//! for evaluation only.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use freqdehaze_core::rng::{seeded_stream, STREAM_SCENES};
use freqdehaze_core::Tensor3;

use crate::dataset::{DatasetIndex, CLEAR_DIR, GT_DIR, HAZY_DIR, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, write_atomic};
use crate::image_io::{save_image, Rgb8Image};

/// One scene ready for the compositor.
pub struct SceneSpec {
    /// Haze-free image J, shape (3, h, w), values in [0,1].
    pub clear: Tensor3<f32>,
    /// Depth map d, shape (1, h, w), entries >= 0 in arbitrary units.
    pub depth: Tensor3<f32>,
    /// Airlight color A, each channel in [0,1].
    pub airlight: [f32; 3],
    /// Scattering coefficient per unit depth, >= 0.
    pub beta: f32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::data(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        for (i, &a) in self.airlight.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::data(format!(
                    "airlight channel {i} is {a}, must be in [0,1]"
                )));
            }
        }
        let want = (1, self.clear.height(), self.clear.width());
        if self.depth.shape() != want {
            return Err(Error::data(format!(
                "depth shape {:?} does not match clear image ({:?})",
                self.depth.shape(),
                want
            )));
        }
        if self.depth.as_slice().iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::data("depth map has a negative or NaN entry"));
        }
        if self.clear.channels() != 3 {
            return Err(Error::data(format!(
                "clear image has {} channels, want 3",
                self.clear.channels()
            )));
        }
        Ok(())
    }
}

/// Applies the scattering model. Output entries stay inside
/// [min(J, A), max(J, A)] pixelwise since t is in (0, 1].
pub fn synthesize_haze(spec: &SceneSpec) -> Result<Tensor3<f32>> {
    spec.validate()?;
    let (h, w) = (spec.clear.height(), spec.clear.width());
    let mut out = Tensor3::zeros(3, h, w);
    let depth = spec.depth.channel(0);
    for c in 0..3 {
        let a = spec.airlight[c];
        let j = spec.clear.channel(c);
        let plane = out.channel_mut(c);
        for i in 0..h * w {
            let t = (-spec.beta * depth[i]).exp();
            plane[i] = j[i] * t + a * (1.0 - t);
        }
    }
    Ok(out)
}

/// Procedural haze-free scene: a two-color gradient, a handful of random
/// rectangles and discs, and a faint cosine texture. Shape colors are
/// skewed dark (each channel is a uniform draw raised to the 1.5 power)
/// because the evaluation side leans on scenes having low dark channels,
/// like the natural images the scattering model is usually applied to.
pub fn make_clear_scene(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor3<f32> {
    let mut img = Tensor3::zeros(3, height, width);

    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let theta = rng.gen::<f32>() * std::f32::consts::TAU;
    let (nx, ny) = (theta.cos(), theta.sin());
    // Projection range of the image rectangle onto the gradient axis.
    let span = nx.abs() * (width.max(1) - 1) as f32 + ny.abs() * (height.max(1) - 1) as f32;
    let base = nx.min(0.0) * (width.max(1) - 1) as f32 + ny.min(0.0) * (height.max(1) - 1) as f32;
    for y in 0..height {
        for x in 0..width {
            let s = if span > 0.0 {
                (nx * x as f32 + ny * y as f32 - base) / span
            } else {
                0.0
            };
            for c in 0..3 {
                img.set(c, y, x, c0[c] * (1.0 - s) + c1[c] * s);
            }
        }
    }

    let shapes = rng.gen_range(4..=7);
    for _ in 0..shapes {
        let color: [f32; 3] = [
            rng.gen::<f32>().powf(1.5),
            rng.gen::<f32>().powf(1.5),
            rng.gen::<f32>().powf(1.5),
        ];
        if rng.gen_bool(0.5) {
            let rw = rng.gen_range(width / 8..=width / 2).max(1);
            let rh = rng.gen_range(height / 8..=height / 2).max(1);
            let x0 = rng.gen_range(0..width.saturating_sub(rw).max(1));
            let y0 = rng.gen_range(0..height.saturating_sub(rh).max(1));
            for y in y0..(y0 + rh).min(height) {
                for x in x0..(x0 + rw).min(width) {
                    for c in 0..3 {
                        img.set(c, y, x, color[c]);
                    }
                }
            }
        } else {
            let r = rng.gen_range(width.min(height) / 8..=width.min(height) / 3).max(1);
            let cx = rng.gen_range(0..width) as i64;
            let cy = rng.gen_range(0..height) as i64;
            let r2 = (r * r) as i64;
            for y in 0..height {
                for x in 0..width {
                    let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                    if dx * dx + dy * dy <= r2 {
                        for c in 0..3 {
                            img.set(c, y, x, color[c]);
                        }
                    }
                }
            }
        }
    }

    for c in 0..3 {
        let amp = rng.gen_range(0.02..0.08f32);
        let fx = rng.gen_range(1..=4) as f32;
        let fy = rng.gen_range(1..=4) as f32;
        let phase = rng.gen::<f32>() * std::f32::consts::TAU;
        for y in 0..height {
            for x in 0..width {
                let arg = std::f32::consts::TAU
                    * (fx * x as f32 / width as f32 + fy * y as f32 / height as f32)
                    + phase;
                let v = img.at(c, y, x) + amp * arg.cos();
                img.set(c, y, x, v);
            }
        }
    }

    img.map(|v| v.clamp(0.0, 1.0))
}

/// Smooth random depth field: a sum of four random 2D cosines, min-max
/// normalized to [0, d_max]. Cheap, deterministic, spatially varying.
pub fn make_depth_map(height: usize, width: usize, d_max: f32, rng: &mut ChaCha8Rng) -> Tensor3<f32> {
    let mut field = vec![0.0f32; height * width];
    for _ in 0..4 {
        let amp = rng.gen_range(0.5..1.0f32);
        let fx = rng.gen_range(1..=3) as f32;
        let fy = rng.gen_range(1..=3) as f32;
        let phase = rng.gen::<f32>() * std::f32::consts::TAU;
        for y in 0..height {
            for x in 0..width {
                let arg = std::f32::consts::TAU
                    * (fx * x as f32 / width as f32 + fy * y as f32 / height as f32)
                    + phase;
                field[y * width + x] += amp * arg.cos();
            }
        }
    }
    let lo = field.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = field.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let scale = if hi > lo { d_max / (hi - lo) } else { 0.0 };
    for v in &mut field {
        *v = (*v - lo) * scale;
    }
    Tensor3::from_vec(1, height, width, field)
        .expect("depth buffer length matches dims")
        .map(|v| v.max(0.0))
}

/// Per-scene haze parameters.
#[derive(Debug, Clone, Copy)]
pub struct HazeDraw {
    pub beta: f32,
    pub airlight: [f32; 3],
    pub d_max: f32,
}

pub fn draw_haze_params(rng: &mut ChaCha8Rng) -> HazeDraw {
    HazeDraw {
        beta: rng.gen_range(0.5..1.2),
        airlight: [
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
        ],
        d_max: rng.gen_range(1.0..2.0),
    }
}

/// Generates `2 * n_scenes` scenes under `root`: scenes 0..n become the
/// hazy split (with their haze-free originals in `gt/`), scenes n..2n the
/// clear split. Fully deterministic in (seed, n_scenes, size): running it
/// twice produces byte-identical files.
pub fn make_toy_dataset(
    root: &Path,
    seed: u64,
    n_scenes: usize,
    size: usize,
) -> Result<DatasetIndex> {
    if n_scenes < 2 {
        return Err(Error::data(format!(
            "need at least 2 scenes for an unpaired split, got {n_scenes}"
        )));
    }
    if size == 0 {
        return Err(Error::data("scene size must be positive"));
    }
    let hazy_dir = root.join(HAZY_DIR);
    let clear_dir = root.join(CLEAR_DIR);
    let gt_dir = root.join(GT_DIR);
    for d in [&hazy_dir, &clear_dir, &gt_dir] {
        create_dir_all(d)?;
    }

    let mut rng = seeded_stream(seed, STREAM_SCENES);
    let mut manifest = String::from("file,role,beta,airlight_r,airlight_g,airlight_b,d_max\n");
    let mut hazy_paths = Vec::with_capacity(n_scenes);
    let mut clear_paths = Vec::with_capacity(n_scenes);

    for i in 0..n_scenes {
        let clear = make_clear_scene(size, size, &mut rng);
        let params = draw_haze_params(&mut rng);
        let depth = make_depth_map(size, size, params.d_max, &mut rng);
        let spec = SceneSpec {
            clear,
            depth,
            airlight: params.airlight,
            beta: params.beta,
        };
        let hazy = synthesize_haze(&spec)?;
        let name = format!("scene_{i:04}.png");
        let hazy_path = hazy_dir.join(&name);
        save_image(&Rgb8Image::from_tensor(&hazy)?, &hazy_path)?;
        save_image(&Rgb8Image::from_tensor(&spec.clear)?, &gt_dir.join(&name))?;
        manifest.push_str(&format!(
            "hazy/{name},hazy,{},{},{},{},{}\n",
            params.beta,
            params.airlight[0],
            params.airlight[1],
            params.airlight[2],
            params.d_max
        ));
        hazy_paths.push(hazy_path);
    }

    for i in 0..n_scenes {
        let clear = make_clear_scene(size, size, &mut rng);
        let name = format!("scene_{i:04}.png");
        let path = clear_dir.join(&name);
        save_image(&Rgb8Image::from_tensor(&clear)?, &path)?;
        manifest.push_str(&format!("clear/{name},clear,0,0,0,0,0\n"));
        clear_paths.push(path);
    }

    write_atomic(&root.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(DatasetIndex {
        hazy_paths,
        clear_paths,
        seed,
    })
}
