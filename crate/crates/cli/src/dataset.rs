//! Unpaired dataset indexing and seeded batch sampling.
//!
//! A dataset root holds `hazy/` and `clear/` image directories (plus `gt/`
//! written by the toy generator, which only evaluation reads). Directory
//! listings are sorted by file name, so an index built from the same tree
//! is identical everywhere. Batch sampling draws independent crops from
//! the two pools; nothing ever assumes the lists are aligned or equally
//! long.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use freqdehaze_core::Tensor3;

use crate::error::{Error, Result};
use crate::image_io::{list_images, load_image};

pub const HAZY_DIR: &str = "hazy";
pub const CLEAR_DIR: &str = "clear";
pub const GT_DIR: &str = "gt";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// File lists for the two unpaired pools. Lengths may differ.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub hazy_paths: Vec<PathBuf>,
    pub clear_paths: Vec<PathBuf>,
    pub seed: u64,
}

/// Scans `<root>/hazy` and `<root>/clear`. Both pools must be non-empty.
pub fn index_dataset(root: &Path, seed: u64) -> Result<DatasetIndex> {
    let hazy_paths = list_images(&root.join(HAZY_DIR))?;
    let clear_paths = list_images(&root.join(CLEAR_DIR))?;
    for (dir, list) in [(HAZY_DIR, &hazy_paths), (CLEAR_DIR, &clear_paths)] {
        if list.is_empty() {
            return Err(Error::data(format!(
                "no images in {}",
                root.join(dir).display()
            )));
        }
    }
    Ok(DatasetIndex {
        hazy_paths,
        clear_paths,
        seed,
    })
}

/// Both pools decoded to [0,1] tensors, with their paths kept for error
/// reporting.
pub struct LoadedDataset {
    pub hazy: Vec<Tensor3<f32>>,
    pub clear: Vec<Tensor3<f32>>,
    pub hazy_names: Vec<String>,
    pub clear_names: Vec<String>,
}

pub fn load_dataset(index: &DatasetIndex) -> Result<LoadedDataset> {
    let decode = |paths: &[PathBuf]| -> Result<(Vec<Tensor3<f32>>, Vec<String>)> {
        let mut tensors = Vec::with_capacity(paths.len());
        let mut names = Vec::with_capacity(paths.len());
        for p in paths {
            tensors.push(load_image(p)?.to_tensor());
            names.push(p.display().to_string());
        }
        Ok((tensors, names))
    };
    let (hazy, hazy_names) = decode(&index.hazy_paths)?;
    let (clear, clear_names) = decode(&index.clear_paths)?;
    Ok(LoadedDataset {
        hazy,
        clear,
        hazy_names,
        clear_names,
    })
}

/// One augmented crop. Draw order per image is fixed: y offset, x offset,
/// horizontal flip, vertical flip; changing it silently changes every
/// seeded run, so it is part of the determinism contract.
fn crop_flip(
    img: &Tensor3<f32>,
    name: &str,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor3<f32>> {
    let (c, h, w) = img.shape();
    if patch > h || patch > w {
        return Err(Error::data(format!(
            "patch {patch} exceeds {name} ({h}x{w})"
        )));
    }
    let y0 = rng.gen_range(0..=h - patch);
    let x0 = rng.gen_range(0..=w - patch);
    let flip_h = rng.gen_bool(0.5);
    let flip_v = rng.gen_bool(0.5);
    let mut out = Tensor3::zeros(c, patch, patch);
    for ch in 0..c {
        for y in 0..patch {
            let sy = if flip_v { y0 + patch - 1 - y } else { y0 + y };
            for x in 0..patch {
                let sx = if flip_h { x0 + patch - 1 - x } else { x0 + x };
                out.set(ch, y, x, img.at(ch, sy, sx));
            }
        }
    }
    Ok(out)
}

/// Draws `batch` hazy and `batch` clear patches, independently and
/// uniformly, each flipped horizontally and vertically with probability
/// one half. Per slot the hazy draw precedes the clear draw. Advancing
/// `rng` is the only state change; the caller owns the stream.
pub fn sample_unpaired_batch(
    data: &LoadedDataset,
    batch: usize,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Tensor3<f32>>, Vec<Tensor3<f32>>)> {
    let mut hazy = Vec::with_capacity(batch);
    let mut clear = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.gen_range(0..data.hazy.len());
        hazy.push(crop_flip(&data.hazy[i], &data.hazy_names[i], patch, rng)?);
        let j = rng.gen_range(0..data.clear.len());
        clear.push(crop_flip(&data.clear[j], &data.clear_names[j], patch, rng)?);
    }
    Ok((hazy, clear))
}
