//! Evaluation of trained clouds against ground-truth renders: PSNR, SSIM,
//! the A/B comparison record, and the silhouette-band uncertainty statistic.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{GsError, Result};
use crate::render::{render_with, RenderOptions};
use crate::ssim::ssim;

/// PSNR in dB for images in [0,1]; exact matches cap at 99 dB.
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(gt: &ImageBuffer, pred: &ImageBuffer) -> Result<f64> {
    let mse = gt.mse(pred)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_view_psnr: Vec<f64>,
    pub per_view_ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    /// Perceptual metric intentionally not computed (no pretrained network).
    pub lpips: String,
    pub cameras: Vec<Camera>,
    pub config_fingerprint: String,
    pub dataset_fingerprint: String,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// FNV-1a over little-endian f64 bit patterns; stable across platforms.
pub fn fingerprint_f64s<I: IntoIterator<Item = f64>>(values: I) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    format!("{hash:016x}")
}

fn camera_fingerprint_values(cameras: &[Camera]) -> impl Iterator<Item = f64> + '_ {
    cameras.iter().flat_map(|c| {
        [
            c.azimuth,
            c.elevation,
            c.radius,
            c.fov_y,
            c.width as f64,
            c.height as f64,
        ]
    })
}

/// Render both clouds from every camera on a white background and score the
/// model's renders against the truth's, per view.
pub fn evaluate(
    model: &GaussianCloud,
    truth_scene: &GaussianCloud,
    cameras: &[Camera],
    config_fingerprint: &str,
) -> Result<EvalReport> {
    if cameras.is_empty() {
        return Err(GsError::InvalidArgument("evaluate needs at least one camera".into()));
    }
    let white = Vector3::repeat(1.0);
    let options = RenderOptions::default();
    let mut per_view_psnr = Vec::with_capacity(cameras.len());
    let mut per_view_ssim = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let truth = render_with(truth_scene, cam, white, &options)?.image;
        let pred = render_with(model, cam, white, &options)?.image;
        per_view_psnr.push(psnr(&truth, &pred)?);
        per_view_ssim.push(ssim(&truth, &pred)?);
    }
    let (mean_psnr, std_psnr) = mean_std(&per_view_psnr);
    let (mean_ssim, std_ssim) = mean_std(&per_view_ssim);
    let dataset_fingerprint = fingerprint_f64s(
        camera_fingerprint_values(cameras)
            .chain(truth_scene.positions.iter().flat_map(|p| [p.x, p.y, p.z])),
    );
    Ok(EvalReport {
        per_view_psnr,
        per_view_ssim,
        mean_psnr,
        std_psnr,
        mean_ssim,
        std_ssim,
        lpips: "not computed".to_string(),
        cameras: cameras.to_vec(),
        config_fingerprint: config_fingerprint.to_string(),
        dataset_fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    /// Per-view (a − b) deltas.
    pub delta_psnr: Vec<f64>,
    pub delta_ssim: Vec<f64>,
    pub mean_delta_psnr: f64,
    pub mean_delta_ssim: f64,
    /// One-sided sign-test p-values for "a > b" (ties dropped).
    pub sign_test_p_psnr: f64,
    pub sign_test_p_ssim: f64,
    pub n_views: usize,
}

/// One-sided sign test: probability of >= `wins` successes out of `n` fair
/// coin flips. Computed in log space so deep tails stay accurate.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ln2 = std::f64::consts::LN_2;
    // ln C(n, k) built incrementally; tail summed via log-sum-exp.
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut terms: Vec<f64> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k >= wins {
            terms.push(ln_c - n as f64 * ln2);
        }
        if k < n {
            ln_c += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// Compare two evaluation reports view-by-view. Both must have been produced
/// over the identical camera set.
pub fn ab_report(a: &EvalReport, b: &EvalReport) -> Result<AbReport> {
    if a.cameras != b.cameras {
        return Err(GsError::InvalidArgument(
            "reports were not evaluated over the same cameras".into(),
        ));
    }
    let delta_psnr: Vec<f64> = a
        .per_view_psnr
        .iter()
        .zip(&b.per_view_psnr)
        .map(|(x, y)| x - y)
        .collect();
    let delta_ssim: Vec<f64> = a
        .per_view_ssim
        .iter()
        .zip(&b.per_view_ssim)
        .map(|(x, y)| x - y)
        .collect();
    let p_of = |deltas: &[f64]| {
        let wins = deltas.iter().filter(|&&d| d > 0.0).count();
        let informative = deltas.iter().filter(|&&d| d != 0.0).count();
        sign_test_p(wins, informative)
    };
    Ok(AbReport {
        mean_delta_psnr: mean_std(&delta_psnr).0,
        mean_delta_ssim: mean_std(&delta_ssim).0,
        sign_test_p_psnr: p_of(&delta_psnr),
        sign_test_p_ssim: p_of(&delta_ssim),
        n_views: delta_psnr.len(),
        delta_psnr,
        delta_ssim,
    })
}

/// Mean of a grayscale map over the object-side rim of the silhouette
/// versus the deeper interior. The silhouette comes from an alpha mask
/// thresholded at 0.5; edge pixels are the boundary pairs, the band is every
/// *inside* pixel within `band_px` (Chebyshev distance) of an edge pixel,
/// and the interior is the rest of the inside.
pub struct BandStats {
    pub band_mean: f64,
    pub interior_mean: f64,
    pub band_pixels: usize,
    pub interior_pixels: usize,
}

pub fn silhouette_band_stats(
    map: &ImageBuffer,
    alpha: &[f64],
    band_px: usize,
) -> Option<BandStats> {
    let (h, w) = (map.height, map.width);
    assert_eq!(alpha.len(), h * w);
    let inside: Vec<bool> = alpha.iter().map(|&a| a > 0.5).collect();
    // Edge pixels: both sides of any inside/outside 4-neighbor transition.
    let mut edge = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w && inside[p] != inside[p + 1] {
                edge[p] = true;
                edge[p + 1] = true;
            }
            if y + 1 < h && inside[p] != inside[p + w] {
                edge[p] = true;
                edge[p + w] = true;
            }
        }
    }
    let mut band = vec![false; h * w];
    let r = band_px as isize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !edge[y as usize * w + x as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                        let np = ny as usize * w + nx as usize;
                        band[np] = inside[np];
                    }
                }
            }
        }
    }
    let gray = |p: usize| (map.data[p * 3] + map.data[p * 3 + 1] + map.data[p * 3 + 2]) / 3.0;
    let mut band_sum = 0.0;
    let mut band_n = 0usize;
    let mut int_sum = 0.0;
    let mut int_n = 0usize;
    for p in 0..h * w {
        if band[p] {
            band_sum += gray(p);
            band_n += 1;
        } else if inside[p] {
            int_sum += gray(p);
            int_n += 1;
        }
    }
    if band_n == 0 || int_n == 0 {
        return None;
    }
    Some(BandStats {
        band_mean: band_sum / band_n as f64,
        interior_mean: int_sum / int_n as f64,
        band_pixels: band_n,
        interior_pixels: int_n,
    })
}
