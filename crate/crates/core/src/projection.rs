//! Perspective projection of 3D Gaussians to screen-space splats.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::camera::CameraMatrices;

/// Default near-plane distance for behind-camera culling.
pub const DEFAULT_NEAR: f64 = 0.01;

/// Default dilation added to the 2D covariance diagonal, in px².
pub const DEFAULT_EPS_2D: f64 = 0.3;

/// A Gaussian projected into screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    /// Mean in pixel coordinates.
    pub mean_2d: Vector2<f64>,
    /// Dilated 2x2 screen-space covariance.
    pub cov_2d: Matrix2<f64>,
    /// Depth along the camera z axis.
    pub depth: f64,
}

/// Project a 3D Gaussian through a camera. Returns `None` when the point is
/// behind the near plane (culled, not an error).
///
/// The screen covariance is J·W·Σ·Wᵀ·Jᵀ with W the world-to-camera rotation
/// and J the pinhole Jacobian at the point, plus `eps_2d` on the diagonal.
pub fn project_gaussian(
    mean: &Vector3<f64>,
    cov_3d: &Matrix3<f64>,
    mats: &CameraMatrices,
    near: f64,
    eps_2d: f64,
) -> Option<Projected> {
    let x_cam = mats.rotation * (mean - mats.center);
    let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
    if z <= near {
        return None;
    }
    let intr = &mats.intrinsics;
    let mean_2d = Vector2::new(intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy);

    let m = mats.rotation * cov_3d * mats.rotation.transpose();
    let j = projection_jacobian(&x_cam, intr.fx, intr.fy);
    let mut cov_2d = j * m * j.transpose();
    cov_2d[(0, 0)] += eps_2d;
    cov_2d[(1, 1)] += eps_2d;

    Some(Projected { mean_2d, cov_2d, depth: z })
}

/// 2x3 Jacobian of the pinhole projection at a camera-space point.
pub(crate) fn projection_jacobian(
    x_cam: &Vector3<f64>,
    fx: f64,
    fy: f64,
) -> nalgebra::Matrix2x3<f64> {
    let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
    nalgebra::Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z))
}

/// Unnormalized Gaussian density exp(-½ dᵀ Σ⁻¹ d); 1 at the mean.
pub fn evaluate_gaussian_2d(x: &Vector2<f64>, mean_2d: &Vector2<f64>, cov_2d: &Matrix2<f64>) -> f64 {
    let q = invert_2x2(cov_2d);
    let d = x - mean_2d;
    (-0.5 * (q * d).dot(&d)).exp()
}

#[inline]
pub(crate) fn invert_2x2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{camera_matrices, Camera};
    use approx::assert_relative_eq;

    fn mats() -> CameraMatrices {
        camera_matrices(&Camera::new(0.0, 0.0, 4.0, 33.8, 128, 128))
    }

    #[test]
    fn on_axis_point_projects_to_center() {
        let m = mats();
        let p = project_gaussian(
            &Vector3::zeros(),
            &Matrix3::from_diagonal_element(0.01),
            &m,
            DEFAULT_NEAR,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(p.mean_2d.x, 64.0, epsilon = 1e-9);
        assert_relative_eq!(p.mean_2d.y, 64.0, epsilon = 1e-9);
        assert_relative_eq!(p.depth, 4.0, epsilon = 1e-12);
        // Isotropic in, isotropic out for an on-axis point.
        assert_relative_eq!(p.cov_2d[(0, 0)], p.cov_2d[(1, 1)], epsilon = 1e-9);
        assert_relative_eq!(p.cov_2d[(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        let m = mats();
        // 10 units past the origin along the view direction is behind... no,
        // a point behind the camera center: world (0, -8, 0).
        let p = project_gaussian(
            &Vector3::new(0.0, -8.0, 0.0),
            &Matrix3::identity(),
            &m,
            DEFAULT_NEAR,
            DEFAULT_EPS_2D,
        );
        assert!(p.is_none());
    }

    #[test]
    fn doubling_depth_quarters_covariance() {
        let m = mats();
        let sigma = Matrix3::from_diagonal_element(0.01);
        let near = project_gaussian(&Vector3::new(0.0, 2.0, 0.0), &sigma, &m, DEFAULT_NEAR, 0.0)
            .unwrap();
        let far = project_gaussian(&Vector3::new(0.0, 8.0, 0.0), &sigma, &m, DEFAULT_NEAR, 0.0)
            .unwrap();
        // depths 6 and 12 from the camera at (0,-4,0)... center-to-point
        // distances: 2-(-4)=6, 8-(-4)=12.
        assert_relative_eq!(near.depth * 2.0, far.depth, epsilon = 1e-12);
        assert_relative_eq!(near.cov_2d[(0, 0)], 4.0 * far.cov_2d[(0, 0)], epsilon = 1e-9);
        assert_relative_eq!(near.cov_2d[(1, 1)], 4.0 * far.cov_2d[(1, 1)], epsilon = 1e-9);
    }

    #[test]
    fn dilation_bounds_eigenvalues() {
        let m = mats();
        // A degenerate, needle-thin Gaussian still yields eigenvalues >= eps.
        let sigma = Matrix3::from_diagonal(&Vector3::new(1e-12, 1e-12, 1e-12));
        let p = project_gaussian(&Vector3::zeros(), &sigma, &m, DEFAULT_NEAR, DEFAULT_EPS_2D)
            .unwrap();
        let eig = p.cov_2d.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= DEFAULT_EPS_2D - 1e-12));
        assert_relative_eq!(p.cov_2d[(0, 1)], p.cov_2d[(1, 0)], epsilon = 1e-15);
    }

    #[test]
    fn depth_increases_along_optical_axis() {
        let m = mats();
        let mut last = 0.0;
        for k in 0..10 {
            let y = -3.0 + k as f64 * 0.7;
            let p = project_gaussian(
                &Vector3::new(0.0, y, 0.0),
                &Matrix3::identity(),
                &m,
                DEFAULT_NEAR,
                DEFAULT_EPS_2D,
            )
            .unwrap();
            assert!(p.depth > last);
            last = p.depth;
        }
    }

    #[test]
    fn gaussian_2d_values() {
        let mean = Vector2::new(3.0, 4.0);
        let cov = Matrix2::identity();
        assert_relative_eq!(evaluate_gaussian_2d(&mean, &mean, &cov), 1.0, epsilon = 1e-15);
        let v = evaluate_gaussian_2d(&Vector2::new(4.0, 4.0), &mean, &cov);
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-12);
        let v3 = evaluate_gaussian_2d(&Vector2::new(3.0, 7.0), &mean, &cov);
        assert_relative_eq!(v3, (-4.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_2d_rotation_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let a = rng.gen_range(0.5..3.0);
            let b = rng.gen_range(-0.4..0.4);
            let c = rng.gen_range(0.5..3.0);
            let cov = Matrix2::new(a, b, b, c);
            let d = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
            let v1 = evaluate_gaussian_2d(&d, &Vector2::zeros(), &cov);
            let v2 = evaluate_gaussian_2d(&(rot * d), &Vector2::zeros(), &(rot * cov * rot.transpose()));
            assert_relative_eq!(v1, v2, epsilon = 1e-12);
        }
    }
}
