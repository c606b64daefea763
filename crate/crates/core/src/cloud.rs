//! The optimizable Gaussian point cloud and its closed-form math.
//!
//! All parameters are stored unconstrained: scales as logs, opacities as
//! logits, quaternions unnormalized (normalized on use), colors as raw linear
//! RGB that is clamped to [0,1] only when rendering.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{GsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    /// Point centers, scene units.
    pub positions: Vec<Vector3<f64>>,
    /// Per-axis log-scales.
    pub log_scales: Vec<Vector3<f64>>,
    /// Rotation quaternions in (w, x, y, z) order, not necessarily unit.
    pub rotations: Vec<Vector4<f64>>,
    /// Linear RGB, unconstrained pre-activation.
    pub colors_dc: Vec<Vector3<f64>>,
    /// Pre-sigmoid opacities.
    pub opacity_logits: Vec<f64>,
}

impl GaussianCloud {
    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            colors_dc: Vec::new(),
            opacity_logits: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            colors_dc: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        log_scale: Vector3<f64>,
        rotation: Vector4<f64>,
        color: Vector3<f64>,
        opacity_logit: f64,
    ) {
        self.positions.push(position);
        self.log_scales.push(log_scale);
        self.rotations.push(rotation);
        self.colors_dc.push(color);
        self.opacity_logits.push(opacity_logit);
    }

    /// Keep only the points where `mask` is true.
    pub fn retain_mask(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.len());
        let mut keep = mask.iter();
        self.positions.retain(|_| *keep.next().unwrap());
        let mut keep = mask.iter();
        self.log_scales.retain(|_| *keep.next().unwrap());
        let mut keep = mask.iter();
        self.rotations.retain(|_| *keep.next().unwrap());
        let mut keep = mask.iter();
        self.colors_dc.retain(|_| *keep.next().unwrap());
        let mut keep = mask.iter();
        self.opacity_logits.retain(|_| *keep.next().unwrap());
    }

    pub fn activated_scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn activated_opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// Check the structural invariants: equal array lengths, finite values,
    /// positive activated scales.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.colors_dc.len() != n
            || self.opacity_logits.len() != n
        {
            return Err(GsError::shape(
                format!("all arrays of length {n}"),
                format!(
                    "{}/{}/{}/{}/{}",
                    self.positions.len(),
                    self.log_scales.len(),
                    self.rotations.len(),
                    self.colors_dc.len(),
                    self.opacity_logits.len()
                ),
            ));
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.colors_dc[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite();
            if !finite {
                return Err(GsError::InvalidArgument(format!(
                    "non-finite parameter at point {i}"
                )));
            }
            if self.activated_scale(i).iter().any(|s| *s <= 0.0 || !s.is_finite()) {
                return Err(GsError::InvalidArgument(format!(
                    "non-positive activated scale at point {i}"
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a (possibly unnormalized) quaternion in (w, x, y, z)
/// order. The input is normalized internally, so the map is scale-invariant.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let norm = q.norm();
    if norm <= 1e-12 {
        return Err(GsError::DegenerateRotation { norm });
    }
    let q = q / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// 3D covariance Σ = R·S·Sᵀ·Rᵀ from a log-scale vector and a quaternion.
pub fn covariance_3d(log_scale: &Vector3<f64>, q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(q)?;
    let s2 = log_scale.map(|v| (2.0 * v).exp());
    // R · diag(s²) · Rᵀ without forming S explicitly.
    let mut rd = r;
    for col in 0..3 {
        let mut c = rd.column_mut(col);
        c *= s2[col];
    }
    Ok(rd * r.transpose())
}
