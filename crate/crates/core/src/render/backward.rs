//! Analytic adjoint of the forward rasterizer.
//!
//! Per pixel, blending is replayed back-to-front from the contribution
//! record, yielding gradients for each contribution's color and opacity and
//! for the screen-space mean and covariance of its splat. A second pass
//! chains those through the projection and the covariance factorization into
//! position, log-scale, rotation, color, and opacity-logit gradients.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use std::collections::HashMap;

use crate::buffer::ImageBuffer;
use crate::camera::{camera_matrices, Camera};
use crate::cloud::{covariance_3d, quat_to_rotation, GaussianCloud};
use crate::error::{GsError, Result};
use crate::projection::projection_jacobian;

use super::{BackwardOutput, ParamGradients, RenderOutput};

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    d_color: Vector3<f64>,
    d_logit: f64,
    d_mean: Vector2<f64>,
    // Full-matrix gradient of the dilated 2D covariance (symmetric).
    g00: f64,
    g01: f64,
    g11: f64,
    touched: bool,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.d_color += o.d_color;
        self.d_logit += o.d_logit;
        self.d_mean += o.d_mean;
        self.g00 += o.g00;
        self.g01 += o.g01;
        self.g11 += o.g11;
        self.touched |= o.touched;
    }
}

pub fn render_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    output: &RenderOutput,
    grad_image: &ImageBuffer,
) -> Result<BackwardOutput> {
    let width = output.width();
    let height = output.height();
    if grad_image.height != height || grad_image.width != width {
        return Err(GsError::shape(
            format!("{height}x{width}"),
            format!("{}x{}", grad_image.height, grad_image.width),
        ));
    }
    if cloud.len() != output.splats.len() {
        return Err(GsError::shape(
            format!("cloud of {} points", output.splats.len()),
            format!("{} points", cloud.len()),
        ));
    }
    let _ = background; // data, not a parameter: receives no gradient

    let options = &output.options;
    let tile = options.tile_size.max(1);
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);

    // Pixel pass, tiled. Each tile accumulates into a local map so the merge
    // below is a fixed-order reduction independent of thread count.
    let tile_pass = |ti: usize| -> Vec<(u32, ScreenGrad)> {
        let ty = ti / tiles_x;
        let tx = ti % tiles_x;
        let px0 = tx * tile;
        let px1 = ((tx + 1) * tile).min(width);
        let py0 = ty * tile;
        let py1 = ((ty + 1) * tile).min(height);

        let mut slots: Vec<(u32, ScreenGrad)> = Vec::new();
        let mut slot_of: HashMap<u32, usize> = HashMap::new();

        for y in py0..py1 {
            for x in px0..px1 {
                let p = y * width + x;
                let entries = output.contribution_record.pixel(p);
                if entries.is_empty() {
                    continue;
                }
                let dldc = grad_image.pixel(y, x);
                if dldc == Vector3::zeros() {
                    continue;
                }
                let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                // Color accumulated behind the current contribution,
                // including the background term.
                let t_final = 1.0 - output.alpha[p];
                let mut behind = background * t_final;
                for e in entries.iter().rev() {
                    let gi = e.index as usize;
                    let s = output.splats[gi].as_ref().unwrap();
                    let slot = *slot_of.entry(e.index).or_insert_with(|| {
                        slots.push((e.index, ScreenGrad::default()));
                        slots.len() - 1
                    });
                    let acc = &mut slots[slot].1;
                    acc.touched = true;
                    let weight = e.alpha * e.t_before;
                    acc.d_color += dldc * weight;
                    if e.alpha < options.alpha_max {
                        let d_alpha =
                            dldc.dot(&(s.color * e.t_before - behind / (1.0 - e.alpha)));
                        let g = e.alpha / s.opacity;
                        let d_g = d_alpha * s.opacity;
                        acc.d_logit += d_alpha * g * s.opacity * (1.0 - s.opacity);
                        let d = center - s.mean_2d;
                        let qd = s.conic * d;
                        acc.d_mean += qd * (d_g * g);
                        let half = 0.5 * d_g * g;
                        acc.g00 += half * qd.x * qd.x;
                        acc.g01 += half * qd.x * qd.y;
                        acc.g11 += half * qd.y * qd.y;
                    }
                    behind += s.color * weight;
                }
            }
        }
        slots
    };

    let tile_grads: Vec<Vec<(u32, ScreenGrad)>> = if options.parallel {
        (0..tiles_x * tiles_y).into_par_iter().map(tile_pass).collect()
    } else {
        (0..tiles_x * tiles_y).map(tile_pass).collect()
    };

    let n = cloud.len();
    let mut screen = vec![ScreenGrad::default(); n];
    for tg in &tile_grads {
        for (gi, g) in tg {
            screen[*gi as usize].add(g);
        }
    }

    // Chain screen-space gradients into 3D parameters.
    let mats = camera_matrices(cam);
    let intr = mats.intrinsics;
    let chain = |i: usize| -> Result<PointGrads> {
        let sg = &screen[i];
        if !sg.touched {
            return Ok(PointGrads::default());
        }
        let mut out = PointGrads {
            contributed: true,
            d_logit: sg.d_logit,
            ..PointGrads::default()
        };

        // Color clamp: zero gradient outside [0,1].
        let raw = &cloud.colors_dc[i];
        for c in 0..3 {
            if raw[c] > 0.0 && raw[c] < 1.0 {
                out.d_color[c] = sg.d_color[c];
            }
        }

        let g2 = Matrix2::new(sg.g00, sg.g01, sg.g01, sg.g11);
        let x_cam = mats.rotation * (cloud.positions[i] - mats.center);
        let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
        let sigma = covariance_3d(&cloud.log_scales[i], &cloud.rotations[i])?;
        let m3 = mats.rotation * sigma * mats.rotation.transpose();
        let j = projection_jacobian(&x_cam, intr.fx, intr.fy);

        // dL/dJ for V = J M Jᵀ with symmetric dL/dV.
        let dj = 2.0 * g2 * j * m3;
        let z2 = z * z;
        let z3 = z2 * z;
        let mut dxc = Vector3::new(
            sg.d_mean.x * intr.fx / z,
            sg.d_mean.y * intr.fy / z,
            -sg.d_mean.x * intr.fx * x / z2 - sg.d_mean.y * intr.fy * y / z2,
        );
        dxc.x += dj[(0, 2)] * (-intr.fx / z2);
        dxc.y += dj[(1, 2)] * (-intr.fy / z2);
        dxc.z += dj[(0, 0)] * (-intr.fx / z2)
            + dj[(1, 1)] * (-intr.fy / z2)
            + dj[(0, 2)] * (2.0 * intr.fx * x / z3)
            + dj[(1, 2)] * (2.0 * intr.fy * y / z3);
        out.d_position = mats.rotation.transpose() * dxc;

        // dL/dΣ in world coordinates.
        let dm = j.transpose() * g2 * j;
        let a = mats.rotation.transpose() * dm * mats.rotation;

        let q = &cloud.rotations[i];
        let r = quat_to_rotation(q)?;
        let s2 = cloud.log_scales[i].map(|v| (2.0 * v).exp());
        let rar = r.transpose() * a * r;
        for k in 0..3 {
            out.d_log_scale[k] = 2.0 * s2[k] * rar[(k, k)];
        }

        // dL/dR = 2 A R D, then through the quaternion normalization.
        let mut rd = r;
        for col in 0..3 {
            let mut ccol = rd.column_mut(col);
            ccol *= s2[col];
        }
        let d_r = 2.0 * a * rd;
        let qn = q / q.norm();
        let dr_dq = rotation_quat_jacobian(&qn);
        let mut d_qhat = Vector4::zeros();
        for k in 0..4 {
            d_qhat[k] = d_r.component_mul(&dr_dq[k]).sum();
        }
        out.d_rotation = (d_qhat - qn * qn.dot(&d_qhat)) / q.norm();

        // NDC-unit screen gradient magnitude for densification.
        let ndc = Vector2::new(
            sg.d_mean.x * width as f64 / 2.0,
            sg.d_mean.y * height as f64 / 2.0,
        );
        out.screen_grad_norm = ndc.norm();
        Ok(out)
    };

    let per_point: Vec<PointGrads> = if options.parallel {
        (0..n).into_par_iter().map(chain).collect::<Result<_>>()?
    } else {
        (0..n).map(chain).collect::<Result<_>>()?
    };

    let mut gradients = ParamGradients::zeros(n);
    let mut screen_grad_norm = vec![0.0; n];
    let mut contributed = vec![false; n];
    for (i, pg) in per_point.into_iter().enumerate() {
        gradients.positions[i] = pg.d_position;
        gradients.log_scales[i] = pg.d_log_scale;
        gradients.rotations[i] = pg.d_rotation;
        gradients.colors_dc[i] = pg.d_color;
        gradients.opacity_logits[i] = pg.d_logit;
        screen_grad_norm[i] = pg.screen_grad_norm;
        contributed[i] = pg.contributed;
    }

    Ok(BackwardOutput {
        gradients,
        screen_grad_norm,
        contributed,
    })
}

#[derive(Clone, Default)]
struct PointGrads {
    d_position: Vector3<f64>,
    d_log_scale: Vector3<f64>,
    d_rotation: Vector4<f64>,
    d_color: Vector3<f64>,
    d_logit: f64,
    screen_grad_norm: f64,
    contributed: bool,
}

/// ∂R/∂q for a unit quaternion (w, x, y, z): four 3x3 matrices.
fn rotation_quat_jacobian(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}
