//! Forward rasterization: project, sort, tile, blend.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::buffer::ImageBuffer;
use crate::camera::{camera_matrices, Camera, CameraMatrices};
use crate::cloud::{covariance_3d, sigmoid, GaussianCloud};
use crate::error::Result;
use crate::projection::{invert_2x2, project_gaussian};

use super::{clamp_color, Contribution, ContributionRecord, RenderOptions, RenderOutput, Splat};

pub(crate) fn project_splats(
    cloud: &GaussianCloud,
    mats: &CameraMatrices,
    width: u32,
    height: u32,
    options: &RenderOptions,
) -> Result<Vec<Option<Splat>>> {
    let build = |i: usize| -> Result<Option<Splat>> {
        let cov3 = covariance_3d(&cloud.log_scales[i], &cloud.rotations[i])?;
        let proj = match project_gaussian(&cloud.positions[i], &cov3, mats, options.near, options.eps_2d)
        {
            Some(p) => p,
            None => return Ok(None),
        };
        let (x0, x1, y0, y1) = match options.footprint_sigmas {
            None => (0, width, 0, height),
            Some(k) => {
                let rx = k * proj.cov_2d[(0, 0)].sqrt();
                let ry = k * proj.cov_2d[(1, 1)].sqrt();
                let x0 = (proj.mean_2d.x - rx - 0.5).floor().max(0.0) as u32;
                let x1 = ((proj.mean_2d.x + rx + 0.5).ceil().max(0.0) as u32).min(width);
                let y0 = (proj.mean_2d.y - ry - 0.5).floor().max(0.0) as u32;
                let y1 = ((proj.mean_2d.y + ry + 0.5).ceil().max(0.0) as u32).min(height);
                if x0 >= x1 || y0 >= y1 {
                    // Footprint misses the image entirely.
                    return Ok(None);
                }
                (x0, x1, y0, y1)
            }
        };
        Ok(Some(Splat {
            mean_2d: proj.mean_2d,
            cov_2d: proj.cov_2d,
            conic: invert_2x2(&proj.cov_2d),
            depth: proj.depth,
            color: clamp_color(&cloud.colors_dc[i]),
            opacity: sigmoid(cloud.opacity_logits[i]),
            x0,
            x1,
            y0,
            y1,
        }))
    };

    if options.parallel {
        (0..cloud.len()).into_par_iter().map(build).collect()
    } else {
        (0..cloud.len()).map(build).collect()
    }
}

/// Surviving splat indices in front-to-back depth order, ties broken by
/// point index.
pub(crate) fn depth_sorted(splats: &[Option<Splat>]) -> Vec<u32> {
    let mut order: Vec<u32> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i as u32))
        .collect();
    order.sort_unstable_by(|&a, &b| {
        let da = splats[a as usize].as_ref().unwrap().depth;
        let db = splats[b as usize].as_ref().unwrap().depth;
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

struct TileResult {
    /// Row-major within the tile.
    colors: Vec<Vector3<f64>>,
    alphas: Vec<f64>,
    offsets: Vec<usize>,
    entries: Vec<Contribution>,
}

pub(crate) fn render_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: Vector3<f64>,
    options: &RenderOptions,
) -> Result<RenderOutput> {
    let width = cam.width as usize;
    let height = cam.height as usize;
    let mats = camera_matrices(cam);
    let splats = project_splats(cloud, &mats, cam.width, cam.height, options)?;
    let order = depth_sorted(&splats);

    let tile = options.tile_size.max(1);
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);

    // Assign splats to the tiles their bounding boxes overlap, preserving
    // depth order within each tile list.
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &gi in &order {
        let s = splats[gi as usize].as_ref().unwrap();
        let tx0 = s.x0 as usize / tile;
        let tx1 = (s.x1 as usize - 1) / tile;
        let ty0 = s.y0 as usize / tile;
        let ty1 = (s.y1 as usize - 1) / tile;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[ty * tiles_x + tx].push(gi);
            }
        }
    }

    let raster_tile = |ti: usize| -> TileResult {
        let ty = ti / tiles_x;
        let tx = ti % tiles_x;
        let px0 = tx * tile;
        let px1 = ((tx + 1) * tile).min(width);
        let py0 = ty * tile;
        let py1 = ((ty + 1) * tile).min(height);
        let n_px = (px1 - px0) * (py1 - py0);
        let list = &tile_lists[ti];

        let mut colors = Vec::with_capacity(n_px);
        let mut alphas = Vec::with_capacity(n_px);
        let mut offsets = Vec::with_capacity(n_px + 1);
        let mut entries = Vec::new();
        offsets.push(0);

        for y in py0..py1 {
            for x in px0..px1 {
                let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut acc = Vector3::zeros();
                let mut t = 1.0f64;
                for &gi in list {
                    let s = splats[gi as usize].as_ref().unwrap();
                    if (x as u32) < s.x0 || (x as u32) >= s.x1 || (y as u32) < s.y0 || (y as u32) >= s.y1
                    {
                        continue;
                    }
                    let d = center - s.mean_2d;
                    let g = (-0.5 * (s.conic * d).dot(&d)).exp();
                    let alpha = (s.opacity * g).min(options.alpha_max);
                    entries.push(Contribution {
                        index: gi,
                        alpha,
                        t_before: t,
                    });
                    acc += s.color * (alpha * t);
                    t *= 1.0 - alpha;
                    if t < options.t_min {
                        break;
                    }
                }
                colors.push(acc + background * t);
                alphas.push(1.0 - t);
                offsets.push(entries.len());
            }
        }
        TileResult {
            colors,
            alphas,
            offsets,
            entries,
        }
    };

    let tile_results: Vec<TileResult> = if options.parallel {
        (0..tiles_x * tiles_y).into_par_iter().map(raster_tile).collect()
    } else {
        (0..tiles_x * tiles_y).map(raster_tile).collect()
    };

    // Assemble global buffers in row-major pixel order.
    let mut image = ImageBuffer::zeros(height, width);
    let mut alpha = vec![0.0; height * width];
    let total_entries: usize = tile_results.iter().map(|t| t.entries.len()).sum();
    let mut record = ContributionRecord {
        offsets: Vec::with_capacity(height * width + 1),
        entries: Vec::with_capacity(total_entries),
    };
    record.offsets.push(0);
    for y in 0..height {
        for x in 0..width {
            let ti = (y / tile) * tiles_x + (x / tile);
            let tr = &tile_results[ti];
            let tile_w = ((ti % tiles_x) * tile + tile).min(width) - (ti % tiles_x) * tile;
            let local = (y - (y / tile) * tile) * tile_w + (x - (x / tile) * tile);
            image.set_pixel(y, x, tr.colors[local]);
            alpha[y * width + x] = tr.alphas[local];
            record
                .entries
                .extend_from_slice(&tr.entries[tr.offsets[local]..tr.offsets[local + 1]]);
            record.offsets.push(record.entries.len());
        }
    }

    Ok(RenderOutput {
        image,
        alpha,
        contribution_record: record,
        background,
        options: *options,
        splats,
    })
}
