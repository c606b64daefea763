//! Synthetic pseudo-label generation: orbit cameras, ground-truth scene
//! synthesis, and controlled per-view inconsistency injection.
//!
//! Each training frame renders a per-view perturbed copy of the true scene,
//! so cross-view conflicts concentrate at silhouettes and sharp textures the
//! same way inconsistent generated multi-view frames do. Held-out evaluation
//! frames always render the unperturbed scene.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::camera::Camera;
use crate::cloud::{logit, GaussianCloud};
use crate::error::{GsError, Result};
use crate::render::{render_with, RenderOptions};

/// One camera orbit: uniform azimuth sweep with sinusoidal elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub frames_per_orbit: usize,
    /// Elevation amplitude in degrees.
    pub elevation_amplitude: f64,
    /// Azimuth phase offset in degrees.
    pub phase: f64,
    pub radius: f64,
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

impl OrbitSpec {
    pub fn new(elevation_amplitude: f64) -> Self {
        Self {
            frames_per_orbit: 21,
            elevation_amplitude,
            phase: 0.0,
            radius: 4.0,
            fov_y: 33.8,
            width: 256,
            height: 256,
        }
    }

    pub fn with_size(mut self, size: u32) -> Self {
        self.width = size;
        self.height = size;
        self
    }

    pub fn with_frames(mut self, n: usize) -> Self {
        self.frames_per_orbit = n;
        self
    }
}

/// The standard three training orbits: elevation amplitudes 0°, -20°, +40°.
pub fn default_orbits(size: u32, frames_per_orbit: usize) -> Vec<OrbitSpec> {
    [0.0, -20.0, 40.0]
        .iter()
        .map(|&a| OrbitSpec::new(a).with_size(size).with_frames(frames_per_orbit))
        .collect()
}

/// Frame k of n: azimuth 360·k/n + phase, elevation amplitude·sin(360·k/n).
pub fn orbit_cameras(spec: &OrbitSpec) -> Vec<Camera> {
    let n = spec.frames_per_orbit;
    (0..n)
        .map(|k| {
            let t = 360.0 * k as f64 / n as f64;
            Camera::new(
                t + spec.phase,
                spec.elevation_amplitude * t.to_radians().sin(),
                spec.radius,
                spec.fov_y,
                spec.width,
                spec.height,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere,
    Box,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Radius for spheres/blobs, half-extent for boxes, scene units.
    pub size: f64,
    /// Base linear RGB color.
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub gaussians_per_primitive: usize,
    /// Std of the per-point color noise around each primitive's base color.
    pub texture_noise: f64,
}

impl SceneSpec {
    /// The standard one-sphere-one-box test scene.
    pub fn sphere_and_box() -> Self {
        Self {
            primitives: vec![
                Primitive {
                    kind: PrimitiveKind::Sphere,
                    center: [-0.35, 0.0, 0.1],
                    size: 0.42,
                    color: [0.82, 0.28, 0.2],
                },
                Primitive {
                    kind: PrimitiveKind::Box,
                    center: [0.38, 0.05, -0.12],
                    size: 0.3,
                    color: [0.2, 0.45, 0.85],
                },
            ],
            gaussians_per_primitive: 2200,
            texture_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(GsError::InvalidConfig(
                "scene spec `primitives` must contain at least one primitive".into(),
            ));
        }
        if self.gaussians_per_primitive == 0 {
            return Err(GsError::InvalidConfig(
                "scene spec `gaussians_per_primitive` must be positive".into(),
            ));
        }
        if self.texture_noise < 0.0 {
            return Err(GsError::InvalidConfig(
                "scene spec `texture_noise` must be nonnegative".into(),
            ));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let c = Vector3::from(p.center);
            let reach = match p.kind {
                PrimitiveKind::Sphere => p.size,
                PrimitiveKind::Box => p.size * 3f64.sqrt(),
                PrimitiveKind::Blob => p.size * 1.35,
            };
            if c.norm() + reach > 1.0 + 1e-9 {
                return Err(GsError::InvalidConfig(format!(
                    "scene spec `primitives[{i}]` extends outside the unit-radius bounding sphere"
                )));
            }
            if p.size <= 0.0 {
                return Err(GsError::InvalidConfig(format!(
                    "scene spec `primitives[{i}].size` must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Controls how much the per-view perturbed scene copies deviate from the
/// true scene. Both zero means perfectly consistent labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InconsistencySpec {
    /// Per-view per-Gaussian position noise std, scene units.
    pub geometry_jitter: f64,
    /// Per-view per-Gaussian color noise std.
    pub color_jitter: f64,
    pub seed: u64,
}

impl InconsistencySpec {
    pub fn none() -> Self {
        Self {
            geometry_jitter: 0.0,
            color_jitter: 0.0,
            seed: 0,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.geometry_jitter == 0.0 && self.color_jitter == 0.0
    }
}

/// One training frame: camera, straight-alpha RGB label, coverage mask, and
/// the orbit it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoFrame {
    pub camera: Camera,
    pub image: ImageBuffer,
    pub alpha: Vec<f64>,
    pub orbit_id: usize,
}

/// A held-out evaluation pose plus the ground-truth render of the true scene
/// (white background).
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutFrame {
    pub camera: Camera,
    pub reference: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    pub frames: Vec<PseudoFrame>,
    pub heldout: Vec<HeldoutFrame>,
    /// The unperturbed ground-truth scene.
    pub scene: GaussianCloud,
    pub orbits: Vec<OrbitSpec>,
    pub inconsistency: InconsistencySpec,
    pub scene_spec: SceneSpec,
    pub scene_seed: u64,
    pub heldout_seed: u64,
}

impl PseudoDataset {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Largest camera radius over the training frames; used as the scene
    /// extent for densification thresholds.
    pub fn scene_extent(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| f.camera.radius)
            .fold(0.0, f64::max)
    }

    /// Composite a frame's straight-alpha label onto a background color.
    pub fn composite_frame(&self, idx: usize, background: Vector3<f64>) -> ImageBuffer {
        let f = &self.frames[idx];
        composite(&f.image, &f.alpha, background)
    }
}

/// rgb·α + background·(1−α), per pixel.
pub fn composite(image: &ImageBuffer, alpha: &[f64], background: Vector3<f64>) -> ImageBuffer {
    assert_eq!(alpha.len(), image.num_pixels());
    let mut out = ImageBuffer::zeros(image.height, image.width);
    for p in 0..image.num_pixels() {
        let a = alpha[p];
        for c in 0..3 {
            out.data[p * 3 + c] = image.data[p * 3 + c] * a + background[c] * (1.0 - a);
        }
    }
    out
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller transform; avoids ln(0).
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (-2.0 * u1.ln()).sqrt();
    (r * u2.cos(), r * u2.sin())
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    gaussian_pair(rng).0 * std
}

/// Deterministically sample a Gaussian cloud over the primitive surfaces.
pub fn make_scene(spec: &SceneSpec, seed: u64) -> Result<GaussianCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.gaussians_per_primitive;
    let mut cloud = GaussianCloud::with_capacity(spec.primitives.len() * n);
    for prim in &spec.primitives {
        let center = Vector3::from(prim.center);
        let base = Vector3::from(prim.color);
        let area = match prim.kind {
            PrimitiveKind::Sphere | PrimitiveKind::Blob => {
                4.0 * std::f64::consts::PI * prim.size * prim.size
            }
            PrimitiveKind::Box => 24.0 * prim.size * prim.size,
        };
        let sigma = 0.65 * (area / n as f64).sqrt();
        let log_scale = Vector3::repeat(sigma.ln());
        for _ in 0..n {
            let local = match prim.kind {
                PrimitiveKind::Sphere => sample_sphere_dir(&mut rng) * prim.size,
                PrimitiveKind::Blob => {
                    let dir = sample_sphere_dir(&mut rng);
                    let theta = dir.z.acos();
                    let phi = dir.y.atan2(dir.x);
                    let r = prim.size * (1.0 + 0.3 * (3.0 * theta).sin() * (2.0 * phi).cos());
                    dir * r
                }
                PrimitiveKind::Box => {
                    let face = rng.gen_range(0..6u32);
                    let u = rng.gen_range(-1.0..1.0) * prim.size;
                    let v = rng.gen_range(-1.0..1.0) * prim.size;
                    let s = prim.size;
                    match face {
                        0 => Vector3::new(s, u, v),
                        1 => Vector3::new(-s, u, v),
                        2 => Vector3::new(u, s, v),
                        3 => Vector3::new(u, -s, v),
                        4 => Vector3::new(u, v, s),
                        _ => Vector3::new(u, v, -s),
                    }
                }
            };
            let mut color = base;
            if spec.texture_noise > 0.0 {
                for c in 0..3 {
                    color[c] = (color[c] + normal(&mut rng, spec.texture_noise)).clamp(0.0, 1.0);
                }
            }
            cloud.push(
                center + local,
                log_scale,
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                color,
                logit(0.95),
            );
        }
    }
    Ok(cloud)
}

fn sample_sphere_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Per-view perturbed copy of the scene. `view_seed` reseeds the jitter
/// globally per view so conflicts differ between frames.
pub fn perturb_scene(
    scene: &GaussianCloud,
    inc: &InconsistencySpec,
    view_index: usize,
) -> GaussianCloud {
    if inc.is_consistent() {
        return scene.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        inc.seed ^ (view_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut out = scene.clone();
    for i in 0..out.len() {
        if inc.geometry_jitter > 0.0 {
            for k in 0..3 {
                out.positions[i][k] += normal(&mut rng, inc.geometry_jitter);
            }
        }
        if inc.color_jitter > 0.0 {
            for k in 0..3 {
                out.colors_dc[i][k] =
                    (out.colors_dc[i][k] + normal(&mut rng, inc.color_jitter)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Render a scene into a straight-alpha label: RGB un-premultiplied from a
/// black-background render, alpha from the accumulated opacity. Compositing
/// the label onto any background then reproduces the direct render against
/// that background.
pub fn render_label(scene: &GaussianCloud, cam: &Camera, options: &RenderOptions) -> Result<(ImageBuffer, Vec<f64>)> {
    let out = render_with(scene, cam, Vector3::zeros(), options)?;
    let mut rgb = out.image;
    for p in 0..rgb.num_pixels() {
        let a = out.alpha[p];
        if a > 1e-12 {
            for c in 0..3 {
                rgb.data[p * 3 + c] = (rgb.data[p * 3 + c] / a).clamp(0.0, 1.0);
            }
        } else {
            for c in 0..3 {
                rgb.data[p * 3 + c] = 0.0;
            }
        }
    }
    Ok((rgb, out.alpha))
}

/// Generate the training frames: one perturbed render per orbit camera.
pub fn render_pseudo_labels(
    scene: &GaussianCloud,
    orbits: &[OrbitSpec],
    inc: &InconsistencySpec,
) -> Result<Vec<PseudoFrame>> {
    let options = RenderOptions::default();
    let mut frames = Vec::new();
    let mut view_index = 0usize;
    for (orbit_id, orbit) in orbits.iter().enumerate() {
        for camera in orbit_cameras(orbit) {
            let perturbed = perturb_scene(scene, inc, view_index);
            let (image, alpha) = render_label(&perturbed, &camera, &options)?;
            frames.push(PseudoFrame {
                camera,
                image,
                alpha,
                orbit_id,
            });
            view_index += 1;
        }
    }
    Ok(frames)
}

/// `n` evaluation cameras: uniform azimuth steps, elevations uniform in
/// [-60°, 60°] from a dedicated seed.
pub fn heldout_cameras(n: usize, seed: u64, proto: &OrbitSpec) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let azimuth = 360.0 * k as f64 / n as f64;
            let elevation = rng.gen_range(-60.0..60.0);
            Camera::new(azimuth, elevation, proto.radius, proto.fov_y, proto.width, proto.height)
        })
        .collect()
}

/// Everything needed to build a dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub orbits: Vec<OrbitSpec>,
    pub inconsistency: InconsistencySpec,
    pub scene_seed: u64,
    pub heldout_count: usize,
    pub heldout_seed: u64,
}

impl DatasetSpec {
    pub fn new(scene: SceneSpec, size: u32, inconsistency: InconsistencySpec) -> Self {
        Self {
            scene,
            orbits: default_orbits(size, 21),
            inconsistency,
            scene_seed: 1,
            heldout_count: 36,
            heldout_seed: 777,
        }
    }
}

/// Build the full dataset: perturbed training frames plus unperturbed
/// ground-truth renders at held-out poses.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<PseudoDataset> {
    if spec.orbits.is_empty() {
        return Err(GsError::InvalidConfig("dataset needs at least one orbit".into()));
    }
    let scene = make_scene(&spec.scene, spec.scene_seed)?;
    let frames = render_pseudo_labels(&scene, &spec.orbits, &spec.inconsistency)?;
    let options = RenderOptions::default();
    let heldout = heldout_cameras(spec.heldout_count, spec.heldout_seed, &spec.orbits[0])
        .into_iter()
        .map(|camera| {
            let reference = render_with(&scene, &camera, Vector3::repeat(1.0), &options)?.image;
            Ok(HeldoutFrame { camera, reference })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoDataset {
        frames,
        heldout,
        scene,
        orbits: spec.orbits.clone(),
        inconsistency: spec.inconsistency,
        scene_spec: spec.scene.clone(),
        scene_seed: spec.scene_seed,
        heldout_seed: spec.heldout_seed,
    })
}
