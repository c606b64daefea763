//! Structural similarity with an analytic gradient.
//!
//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5), constants
//! C₁ = 0.01², C₂ = 0.03², evaluated at valid window positions (no padding),
//! per channel and then averaged. The gradient with respect to the second
//! image is exact, computed by distributing each window's closed-form
//! derivative back to its pixels via the adjoint of the window filter.

use crate::buffer::ImageBuffer;
use crate::error::{GsError, Result};

pub const WINDOW_SIZE: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; WINDOW_SIZE] {
    let mut w = [0.0; WINDOW_SIZE];
    let c = (WINDOW_SIZE / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c) * (i as f64 - c)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// One channel as a dense row-major plane.
fn channel_plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.num_pixels()];
    for (p, v) in out.iter_mut().enumerate() {
        *v = img.data[p * 3 + c];
    }
    out
}

/// Valid correlation with the separable window along rows then columns.
/// Input is h×w, output (h-10)×(w-10).
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; WINDOW_SIZE]) -> Vec<f64> {
    let ow = w - WINDOW_SIZE + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * src[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let oh = h - WINDOW_SIZE + 1;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of `filter_valid`: scatter a field over window positions back to
/// pixel space. Input (h-10)×(w-10), output h×w.
fn filter_adjoint(src: &[f64], h: usize, w: usize, win: &[f64; WINDOW_SIZE]) -> Vec<f64> {
    let oh = h - WINDOW_SIZE + 1;
    let ow = w - WINDOW_SIZE + 1;
    // Columns first (transpose of the second pass above).
    let mut cols = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for (k, &g) in win.iter().enumerate() {
                cols[(y + k) * ow + x] += g * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for (k, &g) in win.iter().enumerate() {
                out[y * w + x + k] += g * v;
            }
        }
    }
    out
}

/// Mean SSIM of `a` vs `b` plus the gradient of that mean with respect to
/// every entry of `b`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height, a.width);
    if h < WINDOW_SIZE || w < WINDOW_SIZE {
        return Err(GsError::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} SSIM window"
        )));
    }
    let win = window();
    let oh = h - WINDOW_SIZE + 1;
    let ow = w - WINDOW_SIZE + 1;
    let n_pos = oh * ow;

    let mut ssim_sum = 0.0;
    let mut grad = ImageBuffer::zeros(h, w);

    for c in 0..3 {
        let x = channel_plane(a, c);
        let y = channel_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

        let mu_x = filter_valid(&x, h, w, &win);
        let mu_y = filter_valid(&y, h, w, &win);
        let m_xx = filter_valid(&xx, h, w, &win);
        let m_yy = filter_valid(&yy, h, w, &win);
        let m_xy = filter_valid(&xy, h, w, &win);

        // Per-window coefficient fields for the gradient:
        //   dS/dy_i = w_i * (fa + x_i*fb + y_i*fc) at each window P.
        let mut fa = vec![0.0; n_pos];
        let mut fb = vec![0.0; n_pos];
        let mut fc = vec![0.0; n_pos];
        for p in 0..n_pos {
            let (ux, uy) = (mu_x[p], mu_y[p]);
            let sx = m_xx[p] - ux * ux;
            let sy = m_yy[p] - uy * uy;
            let sxy = m_xy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = sx + sy + C2;
            let s = (a1 * a2) / (b1 * b2);
            ssim_sum += s;
            let denom = b1 * b2;
            fa[p] = 2.0 * (ux * (a2 - a1) + s * uy * (b1 - b2)) / denom;
            fb[p] = 2.0 * a1 / denom;
            fc[p] = -2.0 * s * b1 / denom;
        }

        let ga = filter_adjoint(&fa, h, w, &win);
        let gb = filter_adjoint(&fb, h, w, &win);
        let gc = filter_adjoint(&fc, h, w, &win);
        let scale = 1.0 / (3.0 * n_pos as f64);
        for p in 0..h * w {
            grad.data[p * 3 + c] = scale * (ga[p] + x[p] * gb[p] + y[p] * gc[p]);
        }
    }

    Ok((ssim_sum / (3.0 * n_pos as f64), grad))
}

/// Mean SSIM without the gradient.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_with_grad(a, b).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, h: usize, w: usize) -> ImageBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageBuffer::zeros(h, w);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn self_similarity_is_one() {
        let img = random_image(1, 16, 16);
        let (s, _) = ssim_with_grad(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_match_closed_form() {
        let a = ImageBuffer::constant(16, 16, Vector3::zeros());
        let b = ImageBuffer::constant(16, 16, Vector3::repeat(1.0));
        let (s, _) = ssim_with_grad(&a, &b).unwrap();
        // Independent scalar evaluation: means 0 and 1, variances 0.
        let expected = ((2.0 * 0.0 * 1.0 + C1) * (0.0 + C2)) / ((0.0 + 1.0 + C1) * (0.0 + C2));
        assert!((s - expected).abs() < 1e-15, "{s} vs {expected}");
    }

    #[test]
    fn window_too_small_is_error() {
        let a = ImageBuffer::zeros(10, 16);
        assert!(ssim_with_grad(&a, &a).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(2, 16, 16);
        let b = random_image(3, 16, 16);
        let (_, grad) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..60 {
            let e = rng.gen_range(0..b.data.len());
            let mut bp = b.clone();
            bp.data[e] += h;
            let sp = ssim(&a, &bp).unwrap();
            bp.data[e] -= 2.0 * h;
            let sm = ssim(&a, &bp).unwrap();
            let fd = (sp - sm) / (2.0 * h);
            let an = grad.data[e];
            let err = (fd - an).abs();
            assert!(
                err <= 1e-4 * an.abs().max(fd.abs()) + 1e-9,
                "entry {e}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn symmetry_of_value() {
        let a = random_image(5, 16, 20);
        let b = random_image(6, 16, 20);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }
}
