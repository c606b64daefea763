//! `ImageBuffer`: a dense H×W×3 float image.
//!
//! Pixel data is stored row-major, channel-interleaved (`(y * width + x) * 3 + c`).
//! Rendered images and labels live in [0,1]; gradient images reuse the same
//! container and may hold any finite value.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{GsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    /// All-zero image.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    /// Constant-color image.
    pub fn constant(height: usize, width: usize, value: Vector3<f64>) -> Self {
        let mut img = Self::zeros(height, width);
        for p in 0..height * width {
            img.data[p * 3] = value.x;
            img.data[p * 3 + 1] = value.y;
            img.data[p * 3 + 2] = value.z;
        }
        img
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(GsError::shape(
                format!("{height}x{width}x3 = {}", height * width * 3),
                format!("{}", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Total number of scalar entries (pixels × channels).
    #[inline]
    pub fn num_entries(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> Vector3<f64> {
        let i = (y * self.width + x) * 3;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, v: Vector3<f64>) {
        let i = (y * self.width + x) * 3;
        self.data[i] = v.x;
        self.data[i + 1] = v.y;
        self.data[i + 2] = v.z;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if !self.same_shape(other) {
            return Err(GsError::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared error against another image of the same shape.
    pub fn mse(&self, other: &ImageBuffer) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.data.len().max(1);
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / n as f64)
    }

    /// Mean absolute error against another image of the same shape.
    pub fn mean_l1(&self, other: &ImageBuffer) -> Result<f64> {
        self.check_same_shape(other)?;
        let n = self.data.len().max(1);
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / n as f64)
    }
}

/// Area-average (box-filter) resampling to an arbitrary target size.
///
/// Each destination pixel averages the source region it covers, with exact
/// fractional coverage weights, so downscaling by an integer factor reduces
/// to a plain block mean.
pub fn resample_area(src: &ImageBuffer, height: usize, width: usize) -> ImageBuffer {
    if height == src.height && width == src.width {
        return src.clone();
    }
    let mut dst = ImageBuffer::zeros(height, width);
    let sy = src.height as f64 / height as f64;
    let sx = src.width as f64 / width as f64;
    for oy in 0..height {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..width {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = Vector3::zeros();
            let mut total = 0.0;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(src.height);
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(src.width);
            for iy in iy0..iy1 {
                let hy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                if hy == 0.0 {
                    continue;
                }
                for ix in ix0..ix1 {
                    let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    acc += src.pixel(iy, ix) * (hy * wx);
                    total += hy * wx;
                }
            }
            if total > 0.0 {
                dst.set_pixel(oy, ox, acc / total);
            }
        }
    }
    dst
}

/// Area-average resampling for a single-channel field (e.g. an alpha mask).
pub fn resample_area_scalar(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_h * src_w);
    if height == src_h && width == src_w {
        return src.to_vec();
    }
    let mut dst = vec![0.0; height * width];
    let sy = src_h as f64 / height as f64;
    let sx = src_w as f64 / width as f64;
    for oy in 0..height {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..width {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            let mut acc = 0.0;
            let mut total = 0.0;
            let iy0 = y0.floor() as usize;
            let iy1 = (y1.ceil() as usize).min(src_h);
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(src_w);
            for iy in iy0..iy1 {
                let hy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                for ix in ix0..ix1 {
                    let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    let w = hy * wx;
                    acc += src[iy * src_w + ix] * w;
                    total += w;
                }
            }
            if total > 0.0 {
                dst[oy * width + ox] = acc / total;
            }
        }
    }
    dst
}
