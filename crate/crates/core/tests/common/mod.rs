//! Shared test machinery: a naive blending oracle independent of the tiled
//! rasterizer, random scene generation, and finite-difference helpers.

use gs_core::buffer::ImageBuffer;
use gs_core::camera::{camera_matrices, Camera};
use gs_core::cloud::{covariance_3d, sigmoid, GaussianCloud};
use gs_core::loss::{total_loss, LossWeights};
use gs_core::projection::{evaluate_gaussian_2d, project_gaussian};
use gs_core::render::{render_with, RenderOptions};
use nalgebra::{Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain per-pixel evaluation of the front-to-back blending formula: every
/// surviving Gaussian at every pixel, no tiles, no footprints, no early
/// termination. Only the per-contribution opacity clamp is shared with the
/// rasterizer, since it is part of the blending definition.
pub fn naive_render(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    alpha_max: f64,
    near: f64,
    eps_2d: f64,
) -> ImageBuffer {
    let mats = camera_matrices(cam);
    let mut projected = Vec::new();
    for i in 0..cloud.len() {
        let cov3 = covariance_3d(&cloud.log_scales[i], &cloud.rotations[i]).unwrap();
        if let Some(p) = project_gaussian(&cloud.positions[i], &cov3, &mats, near, eps_2d) {
            projected.push((i, p));
        }
    }
    // Front-to-back, ties by index: a deliberately simple selection sort.
    for a in 0..projected.len() {
        let mut best = a;
        for b in a + 1..projected.len() {
            let (bi, bp) = &projected[b];
            let (mi, mp) = &projected[best];
            if bp.depth < mp.depth || (bp.depth == mp.depth && bi < mi) {
                best = b;
            }
        }
        projected.swap(a, best);
    }

    let (h, w) = (cam.height as usize, cam.width as usize);
    let mut out = ImageBuffer::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut color = Vector3::zeros();
            let mut transmittance = 1.0;
            for (i, p) in &projected {
                let g = evaluate_gaussian_2d(&px, &p.mean_2d, &p.cov_2d);
                let opacity = sigmoid(cloud.opacity_logits[*i]);
                let alpha = (opacity * g).min(alpha_max);
                let c = cloud.colors_dc[*i].map(|v| v.clamp(0.0, 1.0));
                color += c * alpha * transmittance;
                transmittance *= 1.0 - alpha;
            }
            out.set_pixel(y, x, color + background * transmittance);
        }
    }
    out
}

/// Random small cloud with parameters kept away from the opacity clamp and
/// the color clamp so gradients stay smooth.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    let mut cloud = GaussianCloud::empty();
    for _ in 0..n {
        cloud.push(
            Vector3::new(
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
                rng.gen_range(-0.45..0.45),
            ),
            Vector3::new(
                rng.gen_range(-3.2..-1.7),
                rng.gen_range(-3.2..-1.7),
                rng.gen_range(-3.2..-1.7),
            ),
            Vector4::new(
                rng.gen_range(0.4..1.0),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            ),
            Vector3::new(
                rng.gen_range(0.08..0.92),
                rng.gen_range(0.08..0.92),
                rng.gen_range(0.08..0.92),
            ),
            rng.gen_range(-1.2..1.2),
        );
    }
    cloud
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageBuffer {
    let mut img = ImageBuffer::zeros(h, w);
    for v in img.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    img
}

/// A dual-model gradient-check scene: two small clouds, a camera, and a
/// random target image.
pub struct GradScene {
    pub model1: GaussianCloud,
    pub model2: GaussianCloud,
    pub cam: Camera,
    pub gt: ImageBuffer,
    pub background: Vector3<f64>,
}

/// The full forward chain the acceptance gradient check differentiates.
pub fn scene_total_loss(scene: &GradScene, weights: &LossWeights, opts: &RenderOptions) -> f64 {
    let p1 = render_with(&scene.model1, &scene.cam, scene.background, opts).unwrap();
    let p2 = render_with(&scene.model2, &scene.cam, scene.background, opts).unwrap();
    total_loss(&scene.gt, &p1.image, &p2.image, weights, None, false)
        .unwrap()
        .breakdown
        .total
}

/// Sample a scene, rejecting draws that place any loss residual inside the
/// finite-difference kink band: an entry with |gt-pred| or a materially
/// covered |pred1-pred2| below `band` would let the central difference
/// straddle an |·| kink.
pub fn sample_kink_free_scene(seed: u64, band: f64, opts: &RenderOptions) -> GradScene {
    let mut attempt = seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt);
        let cam = Camera::new(
            rng.gen_range(0.0..360.0),
            rng.gen_range(-40.0..40.0),
            4.0,
            33.8,
            16,
            16,
        );
        let scene = GradScene {
            model1: random_cloud(&mut rng, 5),
            model2: random_cloud(&mut rng, 5),
            cam,
            gt: random_image(&mut rng, 16, 16),
            background: Vector3::new(
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ),
        };
        let p1 = render_with(&scene.model1, &scene.cam, scene.background, opts).unwrap();
        let p2 = render_with(&scene.model2, &scene.cam, scene.background, opts).unwrap();
        let mut clean = true;
        for e in 0..scene.gt.num_entries() {
            let r1 = (scene.gt.data[e] - p1.image.data[e]).abs();
            let r2 = (scene.gt.data[e] - p2.image.data[e]).abs();
            if r1 < band || r2 < band {
                clean = false;
                break;
            }
            // |p1-p2| kinks only matter where either model meaningfully
            // covers the pixel; elsewhere the slope is vanishing and the
            // centered difference agrees with the sign(0) = 0 subgradient.
            let covered = p1.alpha[e / 3] > 1e-6 || p2.alpha[e / 3] > 1e-6;
            let du = (p1.image.data[e] - p2.image.data[e]).abs();
            if covered && du < band {
                clean = false;
                break;
            }
        }
        if clean {
            return scene;
        }
        attempt = attempt.wrapping_add(0x9E37_79B9);
    }
}

/// Relative-error check used by every finite-difference comparison.
pub fn rel_err_ok(analytic: f64, fd: f64, rel_tol: f64, abs_floor: f64) -> bool {
    (analytic - fd).abs() <= rel_tol * analytic.abs().max(fd.abs()) + abs_floor
}
