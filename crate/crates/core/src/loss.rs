//! Training objectives: uncertainty map, uncertainty-weighted pixel loss,
//! D-SSIM, and the total loss composition with analytic gradients.
//!
//! The uncertainty map U is the per-pixel, per-channel absolute difference
//! between the two models' renders. The pixel loss |gt − pred|·e^(−λU) + λU
//! suppresses supervision where the renders disagree while penalizing
//! inflated uncertainty; with U ≡ 0 it reduces to the standard mean L1 loss.
//! Uncertainty weighting applies only to the pixel-wise term, never inside
//! SSIM.

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::Result;
use crate::ssim::ssim_with_grad;

/// Per-pixel, per-channel nonnegative disagreement between two renders.
pub type UncertaintyMap = ImageBuffer;

/// The components of the total loss. The composition identity
/// `total = (1-λ_s)·(l1_u_model1 + l1_u_model2) + λ_s·d_ssim + λ_l·lpips`
/// holds exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1_u_model1: f64,
    pub l1_u_model2: f64,
    pub d_ssim: f64,
    /// 0 when no perceptual plugin is registered.
    pub lpips: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Uncertainty amplification λ.
    pub lambda: f64,
    /// D-SSIM weight λ_s.
    pub lambda_s: f64,
    /// Perceptual-loss weight λ_l (inert without a registered plugin).
    pub lambda_l: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            lambda_s: 0.2,
            lambda_l: 0.5,
        }
    }
}

/// External perceptual-loss hook: given (gt, pred), return the scalar loss
/// and its gradient with respect to pred.
pub trait PerceptualLoss: Send + Sync {
    fn evaluate(&self, gt: &ImageBuffer, pred: &ImageBuffer) -> Result<(f64, ImageBuffer)>;
}

/// U = |img1 − img2|, elementwise per channel.
pub fn uncertainty_map(img1: &ImageBuffer, img2: &ImageBuffer) -> Result<UncertaintyMap> {
    img1.check_same_shape(img2)?;
    let mut u = ImageBuffer::zeros(img1.height, img1.width);
    for (o, (a, b)) in u.data.iter_mut().zip(img1.data.iter().zip(&img2.data)) {
        *o = (a - b).abs();
    }
    Ok(u)
}

/// sign with sign(0) = 0, the subgradient convention used everywhere here.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Result of the uncertainty-weighted L1 loss.
pub struct UncertaintyL1 {
    pub loss: f64,
    pub grad_pred: ImageBuffer,
    pub grad_u: ImageBuffer,
}

/// Mean over all entries of |gt − pred|·e^(−λu) + λu.
pub fn uncertainty_l1(
    gt: &ImageBuffer,
    pred: &ImageBuffer,
    u: &UncertaintyMap,
    lambda: f64,
) -> Result<UncertaintyL1> {
    gt.check_same_shape(pred)?;
    gt.check_same_shape(u)?;
    let n = gt.num_entries() as f64;
    let mut loss = 0.0;
    let mut grad_pred = ImageBuffer::zeros(gt.height, gt.width);
    let mut grad_u = ImageBuffer::zeros(gt.height, gt.width);
    for e in 0..gt.num_entries() {
        let r = (gt.data[e] - pred.data[e]).abs();
        let w = (-lambda * u.data[e]).exp();
        loss += r * w + lambda * u.data[e];
        grad_pred.data[e] = sign(pred.data[e] - gt.data[e]) * w / n;
        grad_u.data[e] = lambda * (1.0 - r * w) / n;
    }
    Ok(UncertaintyL1 {
        loss: loss / n,
        grad_pred,
        grad_u,
    })
}

/// D-SSIM over both predictions: (1 − SSIM(gt, pred1)) + (1 − SSIM(gt, pred2)).
pub fn d_ssim(gt: &ImageBuffer, pred1: &ImageBuffer, pred2: &ImageBuffer) -> Result<f64> {
    let (s1, _) = ssim_with_grad(gt, pred1)?;
    let (s2, _) = ssim_with_grad(gt, pred2)?;
    Ok((1.0 - s1) + (1.0 - s2))
}

pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub grad_pred1: ImageBuffer,
    pub grad_pred2: ImageBuffer,
    pub uncertainty: UncertaintyMap,
}

/// The full dual-model objective and its gradients with respect to both
/// predictions.
///
/// U is computed internally from the two predictions; gradients flow through
/// U into both models (both the e^(−λU) weight and the +λU penalty) unless
/// `detach_uncertainty_weight` is set, which treats U as a constant.
pub fn total_loss(
    gt: &ImageBuffer,
    pred1: &ImageBuffer,
    pred2: &ImageBuffer,
    weights: &LossWeights,
    perceptual: Option<&dyn PerceptualLoss>,
    detach_uncertainty_weight: bool,
) -> Result<TotalLoss> {
    gt.check_same_shape(pred1)?;
    gt.check_same_shape(pred2)?;
    let u = uncertainty_map(pred1, pred2)?;

    let l1 = uncertainty_l1(gt, pred1, &u, weights.lambda)?;
    let l2 = uncertainty_l1(gt, pred2, &u, weights.lambda)?;
    let (s1, s1_grad) = ssim_with_grad(gt, pred1)?;
    let (s2, s2_grad) = ssim_with_grad(gt, pred2)?;
    let dssim = (1.0 - s1) + (1.0 - s2);

    let mut lpips = 0.0;
    let mut lpips_grad1 = None;
    let mut lpips_grad2 = None;
    if let Some(p) = perceptual {
        let (v1, g1) = p.evaluate(gt, pred1)?;
        let (v2, g2) = p.evaluate(gt, pred2)?;
        lpips = v1 + v2;
        lpips_grad1 = Some(g1);
        lpips_grad2 = Some(g2);
    }

    let ws = 1.0 - weights.lambda_s;
    let breakdown = LossBreakdown {
        l1_u_model1: l1.loss,
        l1_u_model2: l2.loss,
        d_ssim: dssim,
        lpips,
        total: ws * (l1.loss + l2.loss) + weights.lambda_s * dssim + weights.lambda_l * lpips,
    };

    let mut grad_pred1 = ImageBuffer::zeros(gt.height, gt.width);
    let mut grad_pred2 = ImageBuffer::zeros(gt.height, gt.width);
    for e in 0..gt.num_entries() {
        // Residual terms of each model's own pixel loss.
        let mut g1 = ws * l1.grad_pred.data[e];
        let mut g2 = ws * l2.grad_pred.data[e];
        if !detach_uncertainty_weight {
            // Both pixel losses see U; dU/dpred1 = sign(pred1 - pred2).
            let du = ws * (l1.grad_u.data[e] + l2.grad_u.data[e]);
            let s = sign(pred1.data[e] - pred2.data[e]);
            g1 += du * s;
            g2 -= du * s;
        }
        g1 += weights.lambda_s * (-s1_grad.data[e]);
        g2 += weights.lambda_s * (-s2_grad.data[e]);
        if let (Some(pg1), Some(pg2)) = (&lpips_grad1, &lpips_grad2) {
            g1 += weights.lambda_l * pg1.data[e];
            g2 += weights.lambda_l * pg2.data[e];
        }
        grad_pred1.data[e] = g1;
        grad_pred2.data[e] = g2;
    }

    Ok(TotalLoss {
        breakdown,
        grad_pred1,
        grad_pred2,
        uncertainty: u,
    })
}

/// Collapse a per-channel uncertainty map to grayscale and min-max normalize
/// it for visualization. An all-constant map normalizes to all zeros.
pub fn normalize_uncertainty_for_viz(u: &UncertaintyMap) -> ImageBuffer {
    let mut gray = vec![0.0; u.num_pixels()];
    for (p, g) in gray.iter_mut().enumerate() {
        *g = (u.data[p * 3] + u.data[p * 3 + 1] + u.data[p * 3 + 2]) / 3.0;
    }
    let min = gray.iter().copied().fold(f64::INFINITY, f64::min);
    let max = gray.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = ImageBuffer::zeros(u.height, u.width);
    if gray.is_empty() || max <= min {
        return out;
    }
    for (p, g) in gray.iter().enumerate() {
        let v = (g - min) / (max - min);
        out.data[p * 3] = v;
        out.data[p * 3 + 1] = v;
        out.data[p * 3 + 2] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageBuffer::zeros(h, w);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn uncertainty_map_basics() {
        let a = random_image(1, 4, 4);
        let u0 = uncertainty_map(&a, &a).unwrap();
        assert!(u0.data.iter().all(|&v| v == 0.0));

        let mut b = a.clone();
        b.data[5] = a.data[5] + 0.4;
        let u = uncertainty_map(&a, &b).unwrap();
        assert!((u.data[5] - 0.4).abs() < 1e-12);
        let u_swapped = uncertainty_map(&b, &a).unwrap();
        assert_eq!(u.data, u_swapped.data);

        let small = ImageBuffer::zeros(2, 2);
        assert!(uncertainty_map(&a, &small).is_err());
    }

    #[test]
    fn uncertainty_l1_reduces_to_mean_l1_at_zero_u() {
        let gt = random_image(2, 8, 8);
        let pred = random_image(3, 8, 8);
        let u = ImageBuffer::zeros(8, 8);
        let out = uncertainty_l1(&gt, &pred, &u, 5.0).unwrap();
        assert_eq!(out.loss, gt.mean_l1(&pred).unwrap());
    }

    #[test]
    fn uncertainty_l1_ignores_u_at_lambda_zero() {
        let gt = random_image(2, 8, 8);
        let pred = random_image(3, 8, 8);
        let u = random_image(4, 8, 8);
        let out = uncertainty_l1(&gt, &pred, &u, 0.0).unwrap();
        assert!((out.loss - gt.mean_l1(&pred).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn single_entry_hand_value() {
        // One entry with residual 0.5, u = 0.2, λ = 5:
        // 0.5·e^(-1) + 1.0 = 1.183940.
        let mut gt = ImageBuffer::zeros(1, 1);
        let mut pred = ImageBuffer::zeros(1, 1);
        let mut u = ImageBuffer::zeros(1, 1);
        gt.data = vec![0.5, 0.5, 0.5];
        pred.data = vec![0.0, 0.0, 0.0];
        u.data = vec![0.2, 0.2, 0.2];
        let out = uncertainty_l1(&gt, &pred, &u, 5.0).unwrap();
        assert!((out.loss - (0.5 * (-1.0f64).exp() + 1.0)).abs() < 1e-12);
        assert!((out.loss - 1.183940).abs() < 1e-6);
    }

    #[test]
    fn zero_loss_on_identical_inputs() {
        let gt = random_image(5, 8, 8);
        let u = ImageBuffer::zeros(8, 8);
        let out = uncertainty_l1(&gt, &gt, &u, 5.0).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn grad_u_vanishes_where_residual_weight_is_one() {
        // d/du [r·e^(-λu) + λu] = 0 exactly when r·e^(-λu) = 1.
        let lambda = 5.0;
        let r: f64 = 2.0;
        let u_star = r.ln() / lambda;
        let mut gt = ImageBuffer::zeros(1, 1);
        gt.data = vec![r, r, r];
        let pred = ImageBuffer::zeros(1, 1);
        let mut u = ImageBuffer::zeros(1, 1);
        u.data = vec![u_star, u_star, u_star];
        let out = uncertainty_l1(&gt, &pred, &u, lambda).unwrap();
        for e in 0..3 {
            assert!(out.grad_u.data[e].abs() < 1e-14);
        }
    }

    #[test]
    fn pixel_weight_strictly_decreasing_in_u() {
        let lambda = 5.0;
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let u = k as f64 * 0.05;
            let w = (-lambda * u).exp();
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn d_ssim_cases() {
        let gt = random_image(7, 16, 16);
        assert!((d_ssim(&gt, &gt, &gt).unwrap()).abs() < 1e-12);

        let pred1 = random_image(8, 16, 16);
        let v = d_ssim(&gt, &pred1, &gt).unwrap();
        let (s1, _) = ssim_with_grad(&gt, &pred1).unwrap();
        assert!((v - (1.0 - s1)).abs() < 1e-12);
        assert!((0.0..=4.0).contains(&v));
    }

    #[test]
    fn total_loss_zero_when_everything_matches() {
        let gt = random_image(9, 16, 16);
        let out = total_loss(&gt, &gt, &gt, &LossWeights::default(), None, false).unwrap();
        assert!(out.breakdown.total.abs() < 1e-12);
        assert!(out.uncertainty.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_collapse_to_pixel_terms() {
        let gt = random_image(10, 16, 16);
        let p1 = random_image(11, 16, 16);
        let p2 = random_image(12, 16, 16);
        let w = LossWeights {
            lambda: 5.0,
            lambda_s: 0.0,
            lambda_l: 0.0,
        };
        let out = total_loss(&gt, &p1, &p2, &w, None, false).unwrap();
        assert!(
            (out.breakdown.total - (out.breakdown.l1_u_model1 + out.breakdown.l1_u_model2)).abs()
                < 1e-15
        );
    }

    #[test]
    fn composition_identity() {
        let gt = random_image(13, 16, 16);
        let p1 = random_image(14, 16, 16);
        let p2 = random_image(15, 16, 16);
        let w = LossWeights::default();
        let out = total_loss(&gt, &p1, &p2, &w, None, false).unwrap();
        let b = out.breakdown;
        let recomposed = (1.0 - w.lambda_s) * (b.l1_u_model1 + b.l1_u_model2)
            + w.lambda_s * b.d_ssim
            + w.lambda_l * b.lpips;
        assert!((b.total - recomposed).abs() < 1e-12);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let gt = random_image(16, 16, 16);
        let p1 = random_image(17, 16, 16);
        let p2 = random_image(18, 16, 16);
        let w = LossWeights::default();
        let out = total_loss(&gt, &p1, &p2, &w, None, false).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        while checked < 50 {
            let e = rng.gen_range(0..p1.data.len());
            // Skip entries within the kink exclusion band of any |·| argument.
            let near_kink = (gt.data[e] - p1.data[e]).abs() < 3e-5
                || (gt.data[e] - p2.data[e]).abs() < 3e-5
                || (p1.data[e] - p2.data[e]).abs() < 3e-5;
            if near_kink {
                continue;
            }
            let mut pp = p1.clone();
            pp.data[e] += h;
            let lp = total_loss(&gt, &pp, &p2, &w, None, false).unwrap().breakdown.total;
            pp.data[e] -= 2.0 * h;
            let lm = total_loss(&gt, &pp, &p2, &w, None, false).unwrap().breakdown.total;
            let fd = (lp - lm) / (2.0 * h);
            let an = out.grad_pred1.data[e];
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-9,
                "entry {e}: analytic {an} vs fd {fd}"
            );
            checked += 1;
        }
    }

    #[test]
    fn perceptual_plugin_contributes() {
        struct FakeLpips;
        impl PerceptualLoss for FakeLpips {
            fn evaluate(&self, gt: &ImageBuffer, pred: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
                let mut grad = ImageBuffer::zeros(gt.height, gt.width);
                let n = gt.num_entries() as f64;
                let mut loss = 0.0;
                for e in 0..gt.num_entries() {
                    let d = pred.data[e] - gt.data[e];
                    loss += d * d;
                    grad.data[e] = 2.0 * d / n;
                }
                Ok((loss / n, grad))
            }
        }
        let gt = random_image(20, 16, 16);
        let p1 = random_image(21, 16, 16);
        let p2 = random_image(22, 16, 16);
        let w = LossWeights::default();
        let with = total_loss(&gt, &p1, &p2, &w, Some(&FakeLpips), false).unwrap();
        let without = total_loss(&gt, &p1, &p2, &w, None, false).unwrap();
        assert!(with.breakdown.lpips > 0.0);
        assert_eq!(without.breakdown.lpips, 0.0);
        assert!(with.breakdown.total > without.breakdown.total);
    }

    #[test]
    fn viz_normalization() {
        let constant = ImageBuffer::constant(4, 4, Vector3::repeat(0.7));
        let out = normalize_uncertainty_for_viz(&constant);
        assert!(out.data.iter().all(|&v| v == 0.0));

        let mut u = ImageBuffer::constant(1, 3, Vector3::repeat(0.1));
        u.set_pixel(0, 1, Vector3::repeat(0.3));
        u.set_pixel(0, 2, Vector3::repeat(0.5));
        let out = normalize_uncertainty_for_viz(&u);
        assert!((out.get(0, 0, 0) - 0.0).abs() < 1e-12);
        assert!((out.get(0, 1, 0) - 0.5).abs() < 1e-12);
        assert!((out.get(0, 2, 0) - 1.0).abs() < 1e-12);
    }
}
