//! Forward rasterization of a Gaussian cloud and its analytic backward pass.
//!
//! The forward pass projects every Gaussian to a screen-space splat, sorts
//! front-to-back by depth (stable index tie-break), and α-blends per pixel
//! with early termination once transmittance drops below `t_min`. The
//! backward pass replays each pixel's blending back-to-front from the
//! recorded contributions and chains screen-space gradients through the
//! projection into every cloud parameter.

mod backward;
mod forward;

pub use backward::render_backward;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::buffer::ImageBuffer;
use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{GsError, Result};
use crate::projection::{DEFAULT_EPS_2D, DEFAULT_NEAR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Near-plane distance; points with camera-space depth <= near are culled.
    pub near: f64,
    /// Dilation added to the 2D covariance diagonal, px².
    pub eps_2d: f64,
    /// Per-contribution opacity clamp.
    pub alpha_max: f64,
    /// Per-pixel blending stops once transmittance falls below this.
    pub t_min: f64,
    /// Rasterization extent in standard deviations. `None` evaluates every
    /// surviving Gaussian at every pixel (the exact mode used by gradient
    /// checks and the blending oracle).
    pub footprint_sigmas: Option<f64>,
    /// Tile edge for the parallel path.
    pub tile_size: usize,
    /// Rasterize tiles on the rayon pool. Results are bitwise identical to
    /// the serial path; this only affects wall-clock time.
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            near: DEFAULT_NEAR,
            eps_2d: DEFAULT_EPS_2D,
            alpha_max: 0.99,
            t_min: 1e-4,
            footprint_sigmas: Some(3.0),
            tile_size: 16,
            parallel: true,
        }
    }
}

impl RenderOptions {
    /// Exact 64-bit mode: no early termination and no footprint restriction,
    /// so the output equals the plain per-pixel blending formula.
    pub fn exact() -> Self {
        Self {
            t_min: 0.0,
            footprint_sigmas: None,
            ..Self::default()
        }
    }
}

/// One recorded blending step: which Gaussian contributed, its per-pixel
/// opacity, and the transmittance before it was composited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub index: u32,
    pub alpha: f64,
    pub t_before: f64,
}

/// Per-pixel ordered contribution lists in compressed (CSR) form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContributionRecord {
    /// `offsets[p]..offsets[p+1]` indexes `entries` for pixel `p` (row-major).
    pub offsets: Vec<usize>,
    pub entries: Vec<Contribution>,
}

impl ContributionRecord {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }
}

/// A Gaussian projected and prepared for rasterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Splat {
    pub mean_2d: Vector2<f64>,
    /// Dilated screen-space covariance.
    pub cov_2d: Matrix2<f64>,
    /// Inverse of `cov_2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    /// Color clamped to [0,1].
    pub color: Vector3<f64>,
    /// Activated opacity.
    pub opacity: f64,
    /// Pixel bounding box, half-open: x in [x0,x1), y in [y0,y1).
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

pub struct RenderOutput {
    pub image: ImageBuffer,
    /// Per-pixel accumulated opacity, row-major.
    pub alpha: Vec<f64>,
    pub contribution_record: ContributionRecord,
    pub background: Vector3<f64>,
    pub options: RenderOptions,
    pub(crate) splats: Vec<Option<Splat>>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Recompute a pixel's color purely from the contribution record. Used to
    /// assert that the record replays the blending exactly.
    pub fn replay_pixel(&self, cloud: &GaussianCloud, p: usize) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        let mut t = 1.0;
        for e in self.contribution_record.pixel(p) {
            let c = clamp_color(&cloud.colors_dc[e.index as usize]);
            acc += c * e.alpha * e.t_before;
            t = e.t_before * (1.0 - e.alpha);
        }
        acc + self.background * t
    }
}

/// Gradients of a scalar loss with respect to every stored cloud parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<nalgebra::Vector4<f64>>,
    pub colors_dc: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            rotations: vec![nalgebra::Vector4::zeros(); n],
            colors_dc: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.colors_dc.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite())
    }
}

/// Backward-pass result: parameter gradients plus the screen-space statistics
/// consumed by adaptive densification.
pub struct BackwardOutput {
    pub gradients: ParamGradients,
    /// Norm of each Gaussian's accumulated 2D-mean gradient, in NDC units
    /// (pixel gradients scaled by half the image extent, which makes the
    /// densification threshold resolution-independent).
    pub screen_grad_norm: Vec<f64>,
    /// Whether the Gaussian contributed to any pixel.
    pub contributed: Vec<bool>,
}

#[inline]
pub(crate) fn clamp_color(c: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0))
}

/// Render with default options.
pub fn render(cloud: &GaussianCloud, cam: &Camera, background: Vector3<f64>) -> Result<RenderOutput> {
    forward::render_with(cloud, cam, background, &RenderOptions::default())
}

/// Render with explicit options.
pub fn render_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    options: &RenderOptions,
) -> Result<RenderOutput> {
    forward::render_with(cloud, cam, background, options)
}

/// Render at a fraction of the camera resolution with the field of view
/// preserved.
pub fn render_at_ratio(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    ratio: f64,
) -> Result<RenderOutput> {
    render_at_ratio_with(cloud, cam, background, ratio, &RenderOptions::default())
}

pub fn render_at_ratio_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    ratio: f64,
    options: &RenderOptions,
) -> Result<RenderOutput> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(GsError::InvalidArgument(format!(
            "render ratio must lie in (0, 1], got {ratio}"
        )));
    }
    forward::render_with(cloud, &cam.at_ratio(ratio), background, options)
}
