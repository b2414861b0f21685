//! 8-bit RGB image files and their tensor conversions.
//!
//! Two formats are supported: PNG for interchange, and binary PPM (P6) as a
//! dependency-free path that tests can assemble byte by byte. Pixels map to
//! tensors in [0,1] by dividing by 255; the reverse direction rounds half
//! up, so a round trip through a tensor is exact.

use std::io;
use std::path::{Path, PathBuf};

use image::ImageEncoder;

use freqdehaze_core::metrics::quantize8;
use freqdehaze_core::{Scalar, Tensor3};

use crate::error::{Error, ImageFault, Result};
use crate::fsutil::{read_bytes, write_atomic};

/// An 8-bit RGB raster: `pixels` holds interleaved RGB triples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::data(format!("image dims {width}x{height} overflow")))?;
        if width == 0 || height == 0 {
            return Err(Error::data(format!(
                "image dims {width}x{height} must be positive"
            )));
        }
        if pixels.len() != expected {
            return Err(Error::data(format!(
                "pixel buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Rgb8Image {
            width,
            height,
            pixels,
        })
    }

    /// Channel-planar tensor in [0,1], shape (3, height, width).
    pub fn to_tensor<S: Scalar>(&self) -> Tensor3<S> {
        let (w, h) = (self.width, self.height);
        let mut t = Tensor3::zeros(3, h, w);
        for c in 0..3 {
            let plane = t.channel_mut(c);
            for (i, px) in self.pixels.chunks_exact(3).enumerate() {
                plane[i] = S::cast(px[c] as f64 / 255.0);
            }
        }
        t
    }

    /// Quantizes a 3-channel tensor back to 8-bit RGB, rounding half up and
    /// clamping to [0,1] first.
    pub fn from_tensor<S: Scalar>(t: &Tensor3<S>) -> Result<Self> {
        if t.channels() != 3 {
            return Err(Error::data(format!(
                "tensor has {} channels, RGB output needs 3",
                t.channels()
            )));
        }
        let (w, h) = (t.width(), t.height());
        let mut pixels = vec![0u8; 3 * w * h];
        for c in 0..3 {
            let plane = t.channel(c);
            for (i, &v) in plane.iter().enumerate() {
                pixels[3 * i + c] = quantize8(v) as u8;
            }
        }
        Rgb8Image::new(w, h, pixels)
    }
}

fn extension_of(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads a PNG or binary PPM file. Unreadable files, unsupported formats
/// and truncated data each surface as their own error.
pub fn load_image(path: &Path) -> Result<Rgb8Image> {
    match extension_of(path).as_str() {
        "png" => load_png(path),
        "ppm" => parse_ppm(&read_bytes(path)?, path),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Unsupported(format!("extension .{other} (want .png or .ppm)")),
        }),
    }
}

/// Writes `img` in the format named by the path's extension, via a temp
/// file so partial outputs never land.
pub fn save_image(img: &Rgb8Image, path: &Path) -> Result<()> {
    match extension_of(path).as_str() {
        "png" => write_atomic(path, &encode_png(img, path)?),
        "ppm" => write_atomic(path, &encode_ppm(img)),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Unsupported(format!("extension .{other} (want .png or .ppm)")),
        }),
    }
}

/// Image files directly inside `dir`, sorted by file name so indices are
/// stable across platforms.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if matches!(extension_of(&path).as_str(), "png" | "ppm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

fn load_png(path: &Path) -> Result<Rgb8Image> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| classify_png_error(path, e))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Rgb8Image::new(w, h, rgb.into_raw())
}

fn classify_png_error(path: &Path, e: image::ImageError) -> Error {
    let path = path.to_path_buf();
    match e {
        image::ImageError::IoError(io_err) => {
            if io_err.kind() == io::ErrorKind::UnexpectedEof {
                Error::Image {
                    path,
                    fault: ImageFault::Truncated("png stream ended early".into()),
                }
            } else {
                Error::Io {
                    path,
                    source: io_err,
                }
            }
        }
        image::ImageError::Unsupported(u) => Error::Image {
            path,
            fault: ImageFault::Unsupported(u.to_string()),
        },
        other => Error::Image {
            path,
            fault: ImageFault::Malformed(other.to_string()),
        },
    }
}

fn encode_png(img: &Rgb8Image, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            &img.pixels,
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Malformed(format!("png encode failed: {e}")),
        })?;
    Ok(buf)
}

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)
// ---------------------------------------------------------------------------

fn encode_ppm(img: &Rgb8Image) -> Vec<u8> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend_from_slice(&img.pixels);
    buf
}

fn parse_ppm(bytes: &[u8], path: &Path) -> Result<Rgb8Image> {
    let malformed = |detail: String| Error::Image {
        path: path.to_path_buf(),
        fault: ImageFault::Malformed(detail),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(malformed("missing P6 signature".into()));
    }
    let mut pos = 2;
    let width = read_ppm_int(bytes, &mut pos, path)?;
    let height = read_ppm_int(bytes, &mut pos, path)?;
    let maxval = read_ppm_int(bytes, &mut pos, path)?;
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval} (only 255 supported)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(malformed("expected whitespace after maxval".into())),
        None => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                fault: ImageFault::Truncated("file ends inside header".into()),
            })
        }
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed(format!("dims {width}x{height} overflow")))?;
    if width == 0 || height == 0 {
        return Err(malformed(format!("zero dimension {width}x{height}")));
    }
    let have = bytes.len() - pos;
    if have < need {
        return Err(Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Truncated(format!("raster has {have} of {need} bytes")),
        });
    }
    Rgb8Image::new(width, height, bytes[pos..pos + need].to_vec())
}

/// Reads one decimal field, skipping whitespace and `#` comment lines.
fn read_ppm_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while !matches!(bytes.get(*pos), None | Some(b'\n')) {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    fault: ImageFault::Truncated("file ends inside header".into()),
                })
            }
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Malformed(format!("expected a number at byte {start}")),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("digits are ascii")
        .parse()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            fault: ImageFault::Malformed(format!("header number: {e}")),
        })
}
