//! 8-bit PNG round-tripping for [0,1] float images, RGB or RGBA when an
//! alpha mask accompanies the image.

use std::path::Path;

use crate::buffer::ImageBuffer;
use crate::error::{GsError, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(path: &Path, img: &ImageBuffer, alpha: Option<&[f64]>) -> Result<()> {
    let (h, w) = (img.height as u32, img.width as u32);
    match alpha {
        None => {
            let mut out = image::RgbImage::new(w, h);
            for (p, px) in out.pixels_mut().enumerate() {
                px.0 = [
                    to_u8(img.data[p * 3]),
                    to_u8(img.data[p * 3 + 1]),
                    to_u8(img.data[p * 3 + 2]),
                ];
            }
            out.save(path)?;
        }
        Some(a) => {
            if a.len() != img.num_pixels() {
                return Err(GsError::shape(
                    format!("alpha of {} entries", img.num_pixels()),
                    format!("{}", a.len()),
                ));
            }
            let mut out = image::RgbaImage::new(w, h);
            for (p, px) in out.pixels_mut().enumerate() {
                px.0 = [
                    to_u8(img.data[p * 3]),
                    to_u8(img.data[p * 3 + 1]),
                    to_u8(img.data[p * 3 + 2]),
                    to_u8(a[p]),
                ];
            }
            out.save(path)?;
        }
    }
    Ok(())
}

/// Load a PNG into [0,1] floats; returns the alpha plane when present.
pub fn load_image(path: &Path) -> Result<(ImageBuffer, Option<Vec<f64>>)> {
    let dynimg = image::open(path)?;
    let has_alpha = dynimg.color().has_alpha();
    let rgba = dynimg.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut img = ImageBuffer::zeros(h, w);
    let mut alpha = vec![0.0; h * w];
    for (p, px) in rgba.pixels().enumerate() {
        img.data[p * 3] = px.0[0] as f64 / 255.0;
        img.data[p * 3 + 1] = px.0[1] as f64 / 255.0;
        img.data[p * 3 + 2] = px.0[2] as f64 / 255.0;
        alpha[p] = px.0[3] as f64 / 255.0;
    }
    Ok((img, has_alpha.then_some(alpha)))
}
