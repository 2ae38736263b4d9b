//! Grayscale image buffers, affine warping and PNG helpers.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Row-major grayscale image with `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Gray {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "buffer of {} values cannot be {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Copies the `h`x`w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Gray> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Gray::new(h, w);
        for r in 0..h {
            let src = &self.data[(row + r) * self.width + col..][..w];
            out.data[r * w..(r + 1) * w].copy_from_slice(src);
        }
        Ok(out)
    }

    /// Bilinear sample at real coordinates; zero outside the support.
    #[inline]
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f64 {
        if !(y > -1.0 && x > -1.0 && y < self.height as f64 && x < self.width as f64) {
            return 0.0;
        }
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let px = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                0.0
            } else {
                self.data[r as usize * self.width + c as usize] as f64
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Similarity transform about the image centre: rotate, then translate, then
/// scale. Positive angles rotate counter-clockwise on screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub rotation_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        rotation_deg: 0.0,
        tx: 0.0,
        ty: 0.0,
        scale: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Resamples `src` under `t` with bilinear interpolation, zero fill and
/// clamping to `[0, 1]`. Output has the same size as the input.
pub fn warp(src: &Gray, t: &Affine) -> Gray {
    if t.is_identity() {
        return src.clone();
    }
    let cy = (src.height as f64 - 1.0) / 2.0;
    let cx = (src.width as f64 - 1.0) / 2.0;
    let theta = t.rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let mut out = Gray::new(src.height, src.width);
    for r in 0..src.height {
        for col in 0..src.width {
            // Invert q - c = scale * (R (p - c) + t).
            let qy = (r as f64 - cy) / t.scale - t.ty;
            let qx = (col as f64 - cx) / t.scale - t.tx;
            // Screen coordinates have y pointing down, so R^-1 uses +sin here.
            let px = c * qx - s * qy;
            let py = s * qx + c * qy;
            let v = src.sample_bilinear(py + cy, px + cx);
            out.data[r * src.width + col] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Bilinear resize, aligning pixel centres.
pub fn resize_bilinear(src: &Gray, height: usize, width: usize) -> Gray {
    let mut out = Gray::new(height, width);
    let sy = src.height as f64 / height as f64;
    let sx = src.width as f64 / width as f64;
    for r in 0..height {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        for c in 0..width {
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            out.data[r * width + c] = src.sample_bilinear(y, x) as f32;
        }
    }
    out
}

pub fn to_luma8(img: &Gray) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let data = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::from_raw(img.width as u32, img.height as u32, data).expect("sized buffer")
}

pub fn to_luma16(img: &Gray) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let data = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    ImageBuffer::from_raw(img.width as u32, img.height as u32, data).expect("sized buffer")
}

pub fn save_png8(img: &Gray, path: &Path) -> Result<()> {
    to_luma8(img).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_png16(img: &Gray, path: &Path) -> Result<()> {
    to_luma16(img).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads any supported image as grayscale in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Gray> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Gray::from_vec(h as usize, w as usize, data)
}

/// Jet colormap, `v` in `[0, 1]`.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let f = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

pub fn rgb_from_floats(width: usize, height: usize, rgb: &[[f32; 3]]) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = rgb[y as usize * width + x as usize];
        Rgb([
            (p[0].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[1].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[2].clamp(0.0, 1.0) * 255.0).round() as u8,
        ])
    })
}
