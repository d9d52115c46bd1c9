//! Grayscale image container, loading and sampling.
//!
//! Pixel `(x, y)` addresses column `x` (rightward, `0..width`) and row `y`
//! (downward, `0..height`); storage is row-major, `data[y * width + x]`.
//! Pixel centers sit on integer coordinates, so the image covers the
//! continuous rectangle `[-0.5, width - 0.5] x [-0.5, height - 0.5]`.
//!
//! The column-major `I[x, y]` notation used in the EL literature, where the
//! first index runs over `w` and the second over `h`, maps onto this layout
//! unchanged: the first index is `x < width`, the second is `y < height`.

use std::path::{Path, PathBuf};

use image::DynamicImage;
use thiserror::Error;

use crate::signal::{Axis, Signal1D};

/// Luma weights used when an RGB image is converted to intensities.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image has zero area ({width}x{height})")]
    ZeroArea { width: usize, height: usize },
    #[error("image must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("expected {expected} intensities, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("intensity {value} at ({x}, {y}) is not a finite value in [0, 1]")]
    InvalidIntensity { x: usize, y: usize, value: f32 },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported pixel format {0}; expected 8- or 16-bit gray or RGB")]
    UnsupportedBitDepth(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// A grayscale image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    /// Wraps row-major intensities, validating size and range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        check_dimensions(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(pos) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(ImageError::InvalidIntensity {
                x: pos % width,
                y: pos / width,
                value: data[pos],
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel. Values are
    /// clamped into `[0, 1]`; non-finite values are rejected.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self, ImageError> {
        check_dimensions(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                if !v.is_finite() {
                    return Err(ImageError::InvalidIntensity { x, y, value: v });
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, ImageError> {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Multiplies every intensity by `factor`, clamping into `[0, 1]`.
    pub fn scaled(&self, factor: f32) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| (v * factor).clamp(0.0, 1.0))
                .collect(),
        }
    }

    /// Bilinear interpolation at continuous coordinates `(u, v)`.
    ///
    /// Coordinates outside the pixel-center lattice are clamped to the edge,
    /// which makes the function total.
    #[inline]
    pub fn bilinear(&self, u: f64, v: f64) -> f64 {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, max_u) };
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max_v) };
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let i = y0 * self.width + x0;
        let p00 = self.data[i] as f64;
        let p10 = self.data[i + 1] as f64;
        let p01 = self.data[i + self.width] as f64;
        let p11 = self.data[i + self.width + 1] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// True if `(u, v)` lies within the pixel-center lattice, i.e. sampling
    /// there needs no clamping.
    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Converts to 8-bit gray, rounding to nearest.
    pub fn to_luma8(&self) -> image::GrayImage {
        let buf = self
            .data
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer size matches dimensions")
    }

    /// Converts to 16-bit gray, rounding to nearest.
    pub fn to_luma16(&self) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
        let buf = self
            .data
            .iter()
            .map(|v| (v * 65535.0).round() as u16)
            .collect();
        image::ImageBuffer::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer size matches dimensions")
    }

    /// Writes a 16-bit grayscale PNG (or TIFF, by extension).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_luma16().save(path).map_err(|source| ImageError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_luma8(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        self.to_luma8().save(path).map_err(|source| ImageError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn check_dimensions(width: usize, height: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroArea { width, height });
    }
    if width < 2 || height < 2 {
        return Err(ImageError::TooSmall { width, height });
    }
    Ok(())
}

/// Loads a PNG or TIFF as normalized intensities.
///
/// 8-bit data is divided by 255 and 16-bit data by 65535; RGB is reduced to
/// luma with [`LUMA_WEIGHTS`] first. Alpha channels are ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let unreadable = |source| ImageError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| unreadable(image::ImageError::IoError(e)))?
        .with_guessed_format()
        .map_err(|e| unreadable(image::ImageError::IoError(e)))?
        .decode()
        .map_err(unreadable)?;
    from_dynamic(&decoded)
}

/// Converts a decoded image into normalized intensities.
pub fn from_dynamic(img: &DynamicImage) -> Result<GrayImage, ImageError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_dimensions(w, h)?;
    let luma = |r: f64, g: f64, b: f64| {
        (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b) as f32
    };
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        other => return Err(ImageError::UnsupportedBitDepth(format!("{:?}", other.color()))),
    };
    // Luma of in-range channels stays in range up to rounding.
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    GrayImage::new(w, h, data)
}

/// Rows accumulated in single precision before being added to the double
/// precision column totals.
const BLOCK_ROWS: usize = 32;

/// Adds `row` into `partial` and returns the row total, in one sweep.
fn accumulate_row(partial: &mut [f32], row: &[f32]) -> f64 {
    let mut lanes = [0.0f32; 16];
    let mut pc = partial.chunks_exact_mut(16);
    let mut rc = row.chunks_exact(16);
    for (p, r) in (&mut pc).zip(&mut rc) {
        for k in 0..16 {
            p[k] += r[k];
            lanes[k] += r[k];
        }
    }
    let mut rest = 0.0f64;
    for (p, &v) in pc.into_remainder().iter_mut().zip(rc.remainder()) {
        *p += v;
        rest += v as f64;
    }
    lanes.iter().map(|&v| v as f64).sum::<f64>() + rest
}

/// Sums every image row: element `y` is `sum_x I[x, y]`. Length `height`.
pub fn row_sum(img: &GrayImage) -> Signal1D {
    profiles(img).0
}

/// Sums every image column: element `x` is `sum_y I[x, y]`. Length `width`.
pub fn col_sum(img: &GrayImage) -> Signal1D {
    profiles(img).1
}

/// Computes `(row_sum, col_sum)` in a single pass over the pixels.
pub fn profiles(img: &GrayImage) -> (Signal1D, Signal1D) {
    let mut cols = vec![0.0f64; img.width];
    let mut partial = vec![0.0f32; img.width];
    let mut rows = Vec::with_capacity(img.height);
    for block in img.data.chunks(BLOCK_ROWS * img.width) {
        partial.fill(0.0);
        for row in block.chunks_exact(img.width) {
            rows.push(accumulate_row(&mut partial, row));
        }
        for (c, &p) in cols.iter_mut().zip(&partial) {
            *c += p as f64;
        }
    }
    (
        Signal1D::from_image(rows, Axis::Y, img),
        Signal1D::from_image(cols, Axis::X, img),
    )
}

/// Free-function form of [`GrayImage::bilinear`].
pub fn bilinear_sample(img: &GrayImage, u: f64, v: f64) -> f64 {
    img.bilinear(u, v)
}
