//! The dual-model training loop: per-iteration view sampling, dual
//! rendering, uncertainty-regularized loss, Adam updates, adaptive
//! densification/pruning, and the progressive resolution/elevation
//! schedules.
//!
//! Both models evolve independently except for the shared uncertainty map in
//! the loss. All randomness flows through ChaCha streams derived from the
//! two config seeds, so a run is bitwise reproducible from its config.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{resample_area, ImageBuffer};
use crate::camera::Camera;
use crate::cloud::{logit, quat_to_rotation, sigmoid, GaussianCloud};
use crate::data::PseudoDataset;
use crate::error::{GsError, Result};
use crate::loss::{
    total_loss, uncertainty_l1, LossBreakdown, LossWeights, PerceptualLoss, UncertaintyMap,
};
use crate::optim::Adam;
use crate::render::{render_backward, render_with, RenderOptions, RenderOutput};
use crate::ssim::ssim_with_grad;

pub const POSITION_CLAMP_RADIUS: f64 = 1.5;
pub const LOG_SCALE_CLAMP: (f64, f64) = (-12.0, 3.0);
pub const OPACITY_LOGIT_CLAMP: (f64, f64) = (-15.0, 15.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Two models with the shared uncertainty map (the full method).
    Dual,
    /// One model, no uncertainty terms.
    SingleBaseline,
    /// One model with a per-point learnable variance rendered into U.
    LearnableVariance,
    /// k models; U is the per-pixel standard deviation across renders.
    EnsembleK,
}

impl std::str::FromStr for AblationMode {
    type Err = GsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Self::Dual),
            "single_baseline" | "baseline" => Ok(Self::SingleBaseline),
            "learnable_variance" | "learnable" => Ok(Self::LearnableVariance),
            "ensemble_k" | "ensemble" => Ok(Self::EnsembleK),
            other => Err(GsError::InvalidConfig(format!(
                "unknown ablation mode `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Dual => "dual",
            Self::SingleBaseline => "single_baseline",
            Self::LearnableVariance => "learnable_variance",
            Self::EnsembleK => "ensemble_k",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Uncertainty amplification λ.
    pub lambda: f64,
    /// D-SSIM weight λ_s.
    pub lambda_s: f64,
    /// Perceptual-loss weight λ_l (inert without a registered plugin).
    pub lambda_l: f64,
    pub lr_position: f64,
    /// Position learning rate decays exponentially to this value.
    pub lr_position_final: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Learnable-variance ablation only.
    pub lr_variance: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub densify_interval: u64,
    pub densify_start: u64,
    pub densify_stop: u64,
    /// Mean screen-space gradient norm (NDC units) above which a point is
    /// cloned or split.
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub opacity_reset_interval: u64,
    pub split_scale_divisor: f64,
    /// Points larger than this fraction of the scene extent split; smaller
    /// ones clone.
    pub clone_scale_fraction: f64,
    pub max_points: usize,
    /// Piecewise-constant (fraction-of-run, resolution ratio), right-continuous.
    pub resolution_milestones: Vec<(f64, f64)>,
    /// Piecewise-constant (fraction-of-run, active orbit ids).
    pub elevation_milestones: Vec<(f64, Vec<usize>)>,
    pub seed1: u64,
    pub seed2: u64,
    pub init_points: usize,
    pub random_background: bool,
    pub ablation_mode: AblationMode,
    /// Number of models in `EnsembleK` mode.
    pub ensemble_k: usize,
    /// Treat U as a constant in the pixel-loss gradients.
    pub detach_uncertainty_weight: bool,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 5000,
            lambda: 5.0,
            lambda_s: 0.2,
            lambda_l: 0.5,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_variance: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            densify_interval: 100,
            densify_start: 500,
            densify_stop: 2500,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            opacity_reset_interval: 1500,
            split_scale_divisor: 1.6,
            clone_scale_fraction: 0.01,
            max_points: 200_000,
            resolution_milestones: vec![(0.0, 0.25), (0.2, 0.5), (0.5, 1.0)],
            elevation_milestones: vec![(0.0, vec![0]), (0.5, vec![0, 1]), (0.8, vec![0, 1, 2])],
            seed1: 1,
            seed2: 2,
            init_points: 4096,
            random_background: true,
            ablation_mode: AblationMode::Dual,
            ensemble_k: 3,
            detach_uncertainty_weight: false,
            checkpoint_interval: 500,
        }
    }
}

impl TrainConfig {
    /// Set the run length, rescaling the densification window to half the
    /// run as in the default configuration.
    pub fn with_total_iters(mut self, total: u64) -> Self {
        self.total_iters = total;
        self.densify_stop = total / 2;
        self
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            lambda_s: self.lambda_s,
            lambda_l: self.lambda_l,
        }
    }

    pub fn num_models(&self) -> usize {
        match self.ablation_mode {
            AblationMode::Dual => 2,
            AblationMode::SingleBaseline | AblationMode::LearnableVariance => 1,
            AblationMode::EnsembleK => self.ensemble_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters < 1 {
            return Err(GsError::InvalidConfig("total_iters must be >= 1".into()));
        }
        if self.init_points == 0 {
            return Err(GsError::InvalidConfig("init_points must be positive".into()));
        }
        if self.max_points == 0 {
            return Err(GsError::InvalidConfig("max_points must be positive".into()));
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_variance", self.lr_variance),
        ] {
            if v <= 0.0 {
                return Err(GsError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.lambda < 0.0 || self.lambda_s < 0.0 || self.lambda_l < 0.0 {
            return Err(GsError::InvalidConfig("loss weights must be nonnegative".into()));
        }
        for (what, fracs) in [
            (
                "resolution_milestones",
                self.resolution_milestones.iter().map(|m| m.0).collect::<Vec<_>>(),
            ),
            (
                "elevation_milestones",
                self.elevation_milestones.iter().map(|m| m.0).collect::<Vec<_>>(),
            ),
        ] {
            if fracs.is_empty() {
                return Err(GsError::InvalidConfig(format!("{what} must not be empty")));
            }
            for w in fracs.windows(2) {
                if w[1] <= w[0] {
                    return Err(GsError::InvalidConfig(format!(
                        "{what} fractions must be strictly increasing"
                    )));
                }
            }
            if fracs.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
                return Err(GsError::InvalidConfig(format!(
                    "{what} fractions must lie in [0,1]"
                )));
            }
        }
        if self.ablation_mode == AblationMode::EnsembleK && self.ensemble_k < 2 {
            return Err(GsError::InvalidConfig("ensemble_k must be >= 2".into()));
        }
        Ok(())
    }
}

/// One Gaussian model plus its optimizer state and densification statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub cloud: GaussianCloud,
    pub adam_position: Adam,
    pub adam_scale: Adam,
    pub adam_rotation: Adam,
    pub adam_color: Adam,
    pub adam_opacity: Adam,
    /// Learnable-variance ablation: per-point pre-sigmoid variance.
    pub variance_logits: Option<Vec<f64>>,
    pub adam_variance: Option<Adam>,
    /// Accumulated screen-space gradient norms since the last densification.
    pub grad_accum: Vec<f64>,
    /// Iterations in which each point contributed since the last densification.
    pub grad_count: Vec<u64>,
    pub rng_densify: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub models: Vec<ModelState>,
    pub iteration: u64,
    pub rng_views: ChaCha8Rng,
    pub rng_background: ChaCha8Rng,
    /// Largest camera radius seen in the dataset; refreshed each step.
    pub scene_extent: f64,
}

/// Everything a caller may want to log about one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub uncertainty: UncertaintyMap,
    pub view_index: usize,
    pub resolution_ratio: f64,
    pub active_orbits: Vec<usize>,
    pub background: Vector3<f64>,
    pub point_counts: Vec<usize>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn model_seed(config: &TrainConfig, idx: usize) -> u64 {
    match idx {
        0 => config.seed1,
        1 => config.seed2,
        k => config.seed2.wrapping_add(k as u64 - 1),
    }
}

/// Initialize all models per the config: `init_points` points uniform inside
/// the unit sphere, opacities at sigmoid = 0.1, isotropic log-scales from
/// the nearest-neighbor distance, mid-gray colors, identity rotations.
pub fn init_models(config: &TrainConfig) -> Result<TrainerState> {
    config.validate()?;
    let models = (0..config.num_models())
        .map(|m| {
            let seed = model_seed(config, m);
            new_model_state(random_init_cloud(config.init_points, seed), config, splitmix64(seed ^ 0xDE5F_17))
        })
        .collect::<Vec<_>>();
    Ok(TrainerState {
        models,
        iteration: 0,
        rng_views: ChaCha8Rng::seed_from_u64(splitmix64(
            config.seed1 ^ config.seed2.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )),
        rng_background: ChaCha8Rng::seed_from_u64(splitmix64(
            config.seed1.wrapping_mul(31).wrapping_add(config.seed2) ^ 0xBAC6_0D,
        )),
        scene_extent: 4.0,
    })
}

fn random_init_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    while positions.len() < n {
        let p = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if p.norm() <= 1.0 {
            positions.push(p);
        }
    }
    let mut cloud = GaussianCloud::with_capacity(n);
    for i in 0..n {
        // Nearest-neighbor distance sets the isotropic footprint.
        let mut nn = f64::INFINITY;
        for j in 0..n {
            if i != j {
                let d = (positions[i] - positions[j]).norm_squared();
                if d < nn {
                    nn = d;
                }
            }
        }
        let nn = if nn.is_finite() { nn.sqrt() } else { 0.1 };
        cloud.push(
            positions[i],
            Vector3::repeat(nn.max(1e-4).ln()),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::repeat(0.5),
            logit(0.1),
        );
    }
    cloud
}

fn new_model_state(cloud: GaussianCloud, config: &TrainConfig, densify_seed: u64) -> ModelState {
    let n = cloud.len();
    let adam = |lr: f64, per_point: usize| {
        Adam::new(lr, config.adam_beta1, config.adam_beta2, config.adam_eps, n * per_point)
    };
    let learnable_variance = config.ablation_mode == AblationMode::LearnableVariance;
    ModelState {
        adam_position: adam(config.lr_position, 3),
        adam_scale: adam(config.lr_scale, 3),
        adam_rotation: adam(config.lr_rotation, 4),
        adam_color: adam(config.lr_color, 3),
        adam_opacity: adam(config.lr_opacity, 1),
        variance_logits: learnable_variance.then(|| vec![logit(0.05); n]),
        adam_variance: learnable_variance.then(|| adam(config.lr_variance, 1)),
        grad_accum: vec![0.0; n],
        grad_count: vec![0; n],
        rng_densify: ChaCha8Rng::seed_from_u64(densify_seed),
        cloud,
    }
}

/// Piecewise-constant resolution ratio, right-continuous at milestones.
pub fn resolution_schedule(iter: u64, total: u64, milestones: &[(f64, f64)]) -> f64 {
    let mut ratio = milestones.first().map(|m| m.1).unwrap_or(1.0);
    for (frac, r) in milestones {
        if iter >= milestone_iter(*frac, total) {
            ratio = *r;
        }
    }
    ratio
}

/// Active orbit ids at an iteration, right-continuous at milestones.
pub fn elevation_schedule(iter: u64, total: u64, milestones: &[(f64, Vec<usize>)]) -> Vec<usize> {
    let mut orbits = milestones.first().map(|m| m.1.clone()).unwrap_or_default();
    for (frac, set) in milestones {
        if iter >= milestone_iter(*frac, total) {
            orbits = set.clone();
        }
    }
    orbits
}

#[inline]
fn milestone_iter(frac: f64, total: u64) -> u64 {
    (frac * total as f64).round() as u64
}

/// Per-iteration background color: uniform RGB when enabled, white otherwise.
pub fn sample_background(rng: &mut ChaCha8Rng, random_background: bool) -> Vector3<f64> {
    if !random_background {
        return Vector3::repeat(1.0);
    }
    Vector3::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    )
}

fn position_lr(config: &TrainConfig, iter: u64) -> f64 {
    let t = if config.total_iters <= 1 {
        0.0
    } else {
        iter as f64 / (config.total_iters - 1) as f64
    };
    config.lr_position * (config.lr_position_final / config.lr_position).powf(t)
}

/// One optimization step: sample a view and a background, render every
/// model, evaluate the mode's loss, update all parameters, and accumulate
/// densification statistics. Densification, pruning, and opacity resets
/// fire at their configured boundaries.
pub fn train_step(
    state: &mut TrainerState,
    dataset: &PseudoDataset,
    config: &TrainConfig,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<StepOutput> {
    if dataset.frames.is_empty() {
        return Err(GsError::InvalidArgument("dataset has no frames".into()));
    }
    // Every schedule phase must render at least as large as the SSIM window.
    for (_, r) in &config.resolution_milestones {
        for f in &dataset.frames {
            let c = f.camera.at_ratio(*r);
            if (c.width as usize) < crate::ssim::WINDOW_SIZE
                || (c.height as usize) < crate::ssim::WINDOW_SIZE
            {
                return Err(GsError::InvalidConfig(format!(
                    "resolution ratio {r} renders {}x{} frames at {}x{}, below the {}px SSIM window",
                    f.camera.width,
                    f.camera.height,
                    c.width,
                    c.height,
                    crate::ssim::WINDOW_SIZE
                )));
            }
        }
    }
    state.scene_extent = dataset.scene_extent();
    let iter = state.iteration;
    let ratio = resolution_schedule(iter, config.total_iters, &config.resolution_milestones);
    let active = elevation_schedule(iter, config.total_iters, &config.elevation_milestones);

    let candidates: Vec<usize> = dataset
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| active.contains(&f.orbit_id))
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(GsError::EmptyViewSet { iteration: iter });
    }
    let view_index = candidates[state.rng_views.gen_range(0..candidates.len())];
    let background = sample_background(&mut state.rng_background, config.random_background);

    let frame = &dataset.frames[view_index];
    let cam = frame.camera.at_ratio(ratio);
    let gt_full = dataset.composite_frame(view_index, background);
    let gt = resample_area(&gt_full, cam.height as usize, cam.width as usize);

    let options = RenderOptions::default();
    let renders: Vec<RenderOutput> = state
        .models
        .iter()
        .map(|m| render_with(&m.cloud, &cam, background, &options))
        .collect::<Result<_>>()?;

    let (breakdown, grads, uncertainty, variance_grad) =
        mode_loss(state, config, &cam, &gt, &renders, perceptual)?;

    let pos_lr = position_lr(config, iter);
    for (mi, out) in renders.iter().enumerate() {
        let model = &mut state.models[mi];
        let bw = render_backward(&model.cloud, &cam, background, out, &grads[mi])?;
        model.adam_position.lr = pos_lr;
        step_vec3(&mut model.adam_position, &mut model.cloud.positions, &bw.gradients.positions);
        step_vec3(&mut model.adam_scale, &mut model.cloud.log_scales, &bw.gradients.log_scales);
        step_vec4(&mut model.adam_rotation, &mut model.cloud.rotations, &bw.gradients.rotations);
        step_vec3(&mut model.adam_color, &mut model.cloud.colors_dc, &bw.gradients.colors_dc);
        model
            .adam_opacity
            .step(&mut model.cloud.opacity_logits, &bw.gradients.opacity_logits);

        if let (Some(vl), Some(va), Some(vg)) = (
            model.variance_logits.as_mut(),
            model.adam_variance.as_mut(),
            variance_grad.as_ref(),
        ) {
            va.step(vl, vg);
            for v in vl.iter_mut() {
                *v = v.clamp(-12.0, 12.0);
            }
        }

        clamp_parameters(&mut model.cloud);
        for i in 0..model.cloud.len() {
            model.grad_accum[i] += bw.screen_grad_norm[i];
            model.grad_count[i] += bw.contributed[i] as u64;
        }
        check_finite(&model.cloud, iter, mi)?;
    }

    state.iteration += 1;
    let done = state.iteration;
    if done >= config.densify_start
        && done <= config.densify_stop
        && config.densify_interval > 0
        && done % config.densify_interval == 0
    {
        densify_and_prune(state, config);
    }
    if config.opacity_reset_interval > 0
        && done % config.opacity_reset_interval == 0
        && done <= config.densify_stop
    {
        reset_opacities(state);
    }

    Ok(StepOutput {
        breakdown,
        uncertainty,
        view_index,
        resolution_ratio: ratio,
        active_orbits: active,
        background,
        point_counts: state.models.iter().map(|m| m.cloud.len()).collect(),
    })
}

type ModeLoss = (LossBreakdown, Vec<ImageBuffer>, UncertaintyMap, Option<Vec<f64>>);

fn mode_loss(
    state: &TrainerState,
    config: &TrainConfig,
    cam: &Camera,
    gt: &ImageBuffer,
    renders: &[RenderOutput],
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<ModeLoss> {
    let weights = config.loss_weights();
    let ws = 1.0 - weights.lambda_s;
    match config.ablation_mode {
        AblationMode::Dual => {
            let out = total_loss(
                gt,
                &renders[0].image,
                &renders[1].image,
                &weights,
                perceptual,
                config.detach_uncertainty_weight,
            )?;
            Ok((
                out.breakdown,
                vec![out.grad_pred1, out.grad_pred2],
                out.uncertainty,
                None,
            ))
        }
        AblationMode::SingleBaseline => {
            let pred = &renders[0].image;
            let zero_u = ImageBuffer::zeros(gt.height, gt.width);
            let l1 = uncertainty_l1(gt, pred, &zero_u, weights.lambda)?;
            let (s, s_grad) = ssim_with_grad(gt, pred)?;
            let dssim = 1.0 - s;
            let mut lpips = 0.0;
            let mut lpips_grad = None;
            if let Some(p) = perceptual {
                let (v, g) = p.evaluate(gt, pred)?;
                lpips = v;
                lpips_grad = Some(g);
            }
            let mut grad = ImageBuffer::zeros(gt.height, gt.width);
            for e in 0..gt.num_entries() {
                grad.data[e] = ws * l1.grad_pred.data[e] + weights.lambda_s * (-s_grad.data[e]);
                if let Some(g) = &lpips_grad {
                    grad.data[e] += weights.lambda_l * g.data[e];
                }
            }
            let breakdown = LossBreakdown {
                l1_u_model1: l1.loss,
                l1_u_model2: 0.0,
                d_ssim: dssim,
                lpips,
                total: ws * l1.loss + weights.lambda_s * dssim + weights.lambda_l * lpips,
            };
            Ok((breakdown, vec![grad], zero_u, None))
        }
        AblationMode::LearnableVariance => {
            let model = &state.models[0];
            let pred = &renders[0].image;
            // Render the per-point variance through the same blending on a
            // black background to obtain U.
            let vl = model.variance_logits.as_ref().expect("variance state present");
            let mut u_cloud = model.cloud.clone();
            for (c, l) in u_cloud.colors_dc.iter_mut().zip(vl) {
                *c = Vector3::repeat(sigmoid(*l));
            }
            let u_out = render_with(&u_cloud, cam, Vector3::zeros(), &RenderOptions::default())?;
            let u = u_out.image.clone();

            let l1 = uncertainty_l1(gt, pred, &u, weights.lambda)?;
            let (s, s_grad) = ssim_with_grad(gt, pred)?;
            let dssim = 1.0 - s;
            let mut grad = ImageBuffer::zeros(gt.height, gt.width);
            let mut u_grad = ImageBuffer::zeros(gt.height, gt.width);
            for e in 0..gt.num_entries() {
                grad.data[e] = ws * l1.grad_pred.data[e] + weights.lambda_s * (-s_grad.data[e]);
                u_grad.data[e] = ws * l1.grad_u.data[e];
            }
            // Only the variance parameters learn from U; the geometry shared
            // with the color render is left to the pixel loss.
            let bw = render_backward(&u_cloud, cam, Vector3::zeros(), &u_out, &u_grad)?;
            let var_grad: Vec<f64> = bw
                .gradients
                .colors_dc
                .iter()
                .zip(vl)
                .map(|(g, l)| {
                    let v = sigmoid(*l);
                    (g.x + g.y + g.z) * v * (1.0 - v)
                })
                .collect();
            let breakdown = LossBreakdown {
                l1_u_model1: l1.loss,
                l1_u_model2: 0.0,
                d_ssim: dssim,
                lpips: 0.0,
                total: ws * l1.loss + weights.lambda_s * dssim,
            };
            Ok((breakdown, vec![grad], u, Some(var_grad)))
        }
        AblationMode::EnsembleK => {
            let k = renders.len();
            let (h, w) = (gt.height, gt.width);
            let mut mean = ImageBuffer::zeros(h, w);
            for r in renders {
                for e in 0..mean.num_entries() {
                    mean.data[e] += r.image.data[e] / k as f64;
                }
            }
            // U = per-pixel standard deviation across the k renders.
            let mut u = ImageBuffer::zeros(h, w);
            for e in 0..u.num_entries() {
                let var = renders
                    .iter()
                    .map(|r| {
                        let d = r.image.data[e] - mean.data[e];
                        d * d
                    })
                    .sum::<f64>()
                    / k as f64;
                u.data[e] = var.sqrt();
            }

            let mut total = 0.0;
            let mut l1_losses = Vec::with_capacity(k);
            let mut dssim_total = 0.0;
            let mut grads: Vec<ImageBuffer> = Vec::with_capacity(k);
            let mut sum_grad_u = ImageBuffer::zeros(h, w);
            for r in renders {
                let l1 = uncertainty_l1(gt, &r.image, &u, weights.lambda)?;
                let (s, s_grad) = ssim_with_grad(gt, &r.image)?;
                dssim_total += 1.0 - s;
                total += ws * l1.loss + weights.lambda_s * (1.0 - s);
                let mut grad = ImageBuffer::zeros(h, w);
                for e in 0..gt.num_entries() {
                    grad.data[e] = ws * l1.grad_pred.data[e] + weights.lambda_s * (-s_grad.data[e]);
                    sum_grad_u.data[e] += ws * l1.grad_u.data[e];
                }
                l1_losses.push(l1.loss);
                grads.push(grad);
            }
            if !config.detach_uncertainty_weight {
                // dU/dpred_i = (pred_i - mean) / (k·U), zero at U = 0.
                for (i, r) in renders.iter().enumerate() {
                    for e in 0..gt.num_entries() {
                        if u.data[e] > 1e-12 {
                            let du = (r.image.data[e] - mean.data[e]) / (k as f64 * u.data[e]);
                            grads[i].data[e] += sum_grad_u.data[e] * du;
                        }
                    }
                }
            }
            let breakdown = LossBreakdown {
                l1_u_model1: l1_losses[0],
                l1_u_model2: l1_losses.get(1).copied().unwrap_or(0.0),
                d_ssim: dssim_total,
                lpips: 0.0,
                total,
            };
            Ok((breakdown, grads, u, None))
        }
    }
}

fn step_vec3(adam: &mut Adam, params: &mut [Vector3<f64>], grads: &[Vector3<f64>]) {
    let mut flat_p: Vec<f64> = params.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let flat_g: Vec<f64> = grads.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    adam.step(&mut flat_p, &flat_g);
    for (i, v) in params.iter_mut().enumerate() {
        v.x = flat_p[i * 3];
        v.y = flat_p[i * 3 + 1];
        v.z = flat_p[i * 3 + 2];
    }
}

fn step_vec4(adam: &mut Adam, params: &mut [Vector4<f64>], grads: &[Vector4<f64>]) {
    let mut flat_p: Vec<f64> = params.iter().flat_map(|v| [v.x, v.y, v.z, v.w]).collect();
    let flat_g: Vec<f64> = grads.iter().flat_map(|v| [v.x, v.y, v.z, v.w]).collect();
    adam.step(&mut flat_p, &flat_g);
    for (i, v) in params.iter_mut().enumerate() {
        v.x = flat_p[i * 4];
        v.y = flat_p[i * 4 + 1];
        v.z = flat_p[i * 4 + 2];
        v.w = flat_p[i * 4 + 3];
    }
}

/// Post-step parameter hygiene: colors stay inside [0,1] so their gradients
/// never die at the render clamp; scales, logits, and positions stay in
/// ranges that keep the forward pass well-conditioned.
fn clamp_parameters(cloud: &mut GaussianCloud) {
    for c in cloud.colors_dc.iter_mut() {
        for k in 0..3 {
            c[k] = c[k].clamp(0.0, 1.0);
        }
    }
    for s in cloud.log_scales.iter_mut() {
        for k in 0..3 {
            s[k] = s[k].clamp(LOG_SCALE_CLAMP.0, LOG_SCALE_CLAMP.1);
        }
    }
    for o in cloud.opacity_logits.iter_mut() {
        *o = o.clamp(OPACITY_LOGIT_CLAMP.0, OPACITY_LOGIT_CLAMP.1);
    }
    for p in cloud.positions.iter_mut() {
        let n = p.norm();
        if n > POSITION_CLAMP_RADIUS {
            *p *= POSITION_CLAMP_RADIUS / n;
        }
    }
}

fn check_finite(cloud: &GaussianCloud, iteration: u64, model: usize) -> Result<()> {
    let ok = cloud.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
        && cloud.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
        && cloud.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
        && cloud.colors_dc.iter().all(|v| v.iter().all(|x| x.is_finite()))
        && cloud.opacity_logits.iter().all(|x| x.is_finite());
    if ok {
        Ok(())
    } else {
        Err(GsError::NonFinite {
            iteration,
            field: if model == 0 { "model1" } else { "model2" },
        })
    }
}

/// Clone/split points whose mean accumulated screen gradient exceeds the
/// threshold, prune transparent points, reset the accumulators, and align
/// the optimizer moments (new points start from zero moments).
pub fn densify_and_prune(state: &mut TrainerState, config: &TrainConfig) {
    let extent = state.scene_extent;
    for model in state.models.iter_mut() {
        densify_model(model, config, extent);
    }
}

struct NewPoint {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: Vector4<f64>,
    color: Vector3<f64>,
    opacity_logit: f64,
    variance_logit: f64,
}

fn densify_model(model: &mut ModelState, config: &TrainConfig, extent: f64) {
    let n = model.cloud.len();
    let mut keep = vec![true; n];
    let mut added: Vec<NewPoint> = Vec::new();

    // Opacity pruning first; pruned points never densify.
    let mut total = 0usize;
    for i in 0..n {
        if model.cloud.activated_opacity(i) < config.prune_opacity_threshold {
            keep[i] = false;
        } else {
            total += 1;
        }
    }

    for i in 0..n {
        if !keep[i] {
            continue;
        }
        let mean_grad = model.grad_accum[i] / model.grad_count[i].max(1) as f64;
        if mean_grad <= config.densify_grad_threshold || total + 1 > config.max_points {
            continue;
        }
        let scale = model.cloud.activated_scale(i);
        let variance_logit = model.variance_logits.as_ref().map(|v| v[i]).unwrap_or(0.0);
        if scale.max() > config.clone_scale_fraction * extent {
            // Split: the parent is replaced by two children sampled within
            // its footprint, scales divided down.
            keep[i] = false;
            total -= 1;
            let r = quat_to_rotation(&model.cloud.rotations[i])
                .unwrap_or_else(|_| nalgebra::Matrix3::identity());
            let child_scale =
                model.cloud.log_scales[i].map(|v| v - config.split_scale_divisor.ln());
            for _ in 0..2 {
                let xi = Vector3::new(
                    normal_sample(&mut model.rng_densify),
                    normal_sample(&mut model.rng_densify),
                    normal_sample(&mut model.rng_densify),
                );
                added.push(NewPoint {
                    position: model.cloud.positions[i] + r * scale.component_mul(&xi),
                    log_scale: child_scale,
                    rotation: model.cloud.rotations[i],
                    color: model.cloud.colors_dc[i],
                    opacity_logit: model.cloud.opacity_logits[i],
                    variance_logit,
                });
                total += 1;
            }
        } else {
            // Clone: keep the original and append a copy.
            added.push(NewPoint {
                position: model.cloud.positions[i],
                log_scale: model.cloud.log_scales[i],
                rotation: model.cloud.rotations[i],
                color: model.cloud.colors_dc[i],
                opacity_logit: model.cloud.opacity_logits[i],
                variance_logit,
            });
            total += 1;
        }
    }

    model.cloud.retain_mask(&keep);
    model.adam_position.retain_mask(&keep, 3);
    model.adam_scale.retain_mask(&keep, 3);
    model.adam_rotation.retain_mask(&keep, 4);
    model.adam_color.retain_mask(&keep, 3);
    model.adam_opacity.retain_mask(&keep, 1);
    if let (Some(vl), Some(va)) = (model.variance_logits.as_mut(), model.adam_variance.as_mut()) {
        let mut it = keep.iter();
        vl.retain(|_| *it.next().unwrap());
        va.retain_mask(&keep, 1);
    }

    let n_added = added.len();
    for p in added {
        model
            .cloud
            .push(p.position, p.log_scale, p.rotation, p.color, p.opacity_logit);
        if let Some(vl) = model.variance_logits.as_mut() {
            vl.push(p.variance_logit);
        }
    }
    model.adam_position.extend(n_added * 3);
    model.adam_scale.extend(n_added * 3);
    model.adam_rotation.extend(n_added * 4);
    model.adam_color.extend(n_added * 3);
    model.adam_opacity.extend(n_added);
    if let Some(va) = model.adam_variance.as_mut() {
        va.extend(n_added);
    }

    model.grad_accum = vec![0.0; model.cloud.len()];
    model.grad_count = vec![0; model.cloud.len()];
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Clamp every opacity down to at most sigmoid⁻¹(0.01) and restart the
/// opacity moments.
fn reset_opacities(state: &mut TrainerState) {
    let cap = logit(0.01);
    for model in state.models.iter_mut() {
        for l in model.cloud.opacity_logits.iter_mut() {
            *l = l.min(cap);
        }
        model.adam_opacity.reset_moments();
    }
}

/// After training, pick the model with the lower mean L1 over all training
/// views rendered at full resolution on white; ties go to the first model.
pub fn select_output_model(state: &TrainerState, dataset: &PseudoDataset) -> Result<usize> {
    let white = Vector3::repeat(1.0);
    let options = RenderOptions::default();
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (mi, model) in state.models.iter().enumerate() {
        let mut sum = 0.0;
        for (fi, frame) in dataset.frames.iter().enumerate() {
            let rendered = render_with(&model.cloud, &frame.camera, white, &options)?.image;
            let gt = dataset.composite_frame(fi, white);
            sum += rendered.mean_l1(&gt)?;
        }
        let score = sum / dataset.frames.len().max(1) as f64;
        if score < best_score {
            best_score = score;
            best = mi;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec, InconsistencySpec, SceneSpec};

    fn tiny_dataset(jitter: f64) -> PseudoDataset {
        let mut scene = SceneSpec::sphere_and_box();
        scene.gaussians_per_primitive = 250;
        let mut spec = DatasetSpec::new(
            scene,
            48,
            InconsistencySpec {
                geometry_jitter: jitter,
                color_jitter: 0.0,
                seed: 5,
            },
        );
        for o in spec.orbits.iter_mut() {
            o.frames_per_orbit = 4;
        }
        spec.heldout_count = 2;
        generate_dataset(&spec).unwrap()
    }

    fn tiny_config(mode: AblationMode) -> TrainConfig {
        TrainConfig {
            init_points: 60,
            ablation_mode: mode,
            max_points: 500,
            ..TrainConfig::default()
        }
        .with_total_iters(40)
    }

    #[test]
    fn init_same_seed_makes_identical_models() {
        let mut config = tiny_config(AblationMode::Dual);
        config.seed1 = 7;
        config.seed2 = 7;
        let state = init_models(&config).unwrap();
        assert_eq!(state.models[0].cloud, state.models[1].cloud);
    }

    #[test]
    fn init_different_seeds_differ() {
        let config = tiny_config(AblationMode::Dual);
        let state = init_models(&config).unwrap();
        assert_ne!(state.models[0].cloud.positions, state.models[1].cloud.positions);
        assert_eq!(state.models[0].cloud.len(), 60);
        assert_eq!(state.models[1].cloud.len(), 60);
    }

    #[test]
    fn init_rejects_zero_points() {
        let mut config = tiny_config(AblationMode::Dual);
        config.init_points = 0;
        assert!(init_models(&config).is_err());
    }

    #[test]
    fn init_points_inside_unit_sphere_with_opacity_tenth() {
        let config = tiny_config(AblationMode::Dual);
        let state = init_models(&config).unwrap();
        for m in &state.models {
            for p in &m.cloud.positions {
                assert!(p.norm() <= 1.0 + 1e-12);
            }
            for i in 0..m.cloud.len() {
                assert!((m.cloud.activated_opacity(i) - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resolution_schedule_milestones() {
        let ms = TrainConfig::default().resolution_milestones;
        assert_eq!(resolution_schedule(0, 5000, &ms), 0.25);
        assert_eq!(resolution_schedule(999, 5000, &ms), 0.25);
        assert_eq!(resolution_schedule(1000, 5000, &ms), 0.5);
        assert_eq!(resolution_schedule(2499, 5000, &ms), 0.5);
        assert_eq!(resolution_schedule(2500, 5000, &ms), 1.0);
        assert_eq!(resolution_schedule(4999, 5000, &ms), 1.0);
    }

    #[test]
    fn elevation_schedule_milestones() {
        let ms = TrainConfig::default().elevation_milestones;
        assert_eq!(elevation_schedule(0, 5000, &ms), vec![0]);
        assert_eq!(elevation_schedule(2499, 5000, &ms), vec![0]);
        assert_eq!(elevation_schedule(2500, 5000, &ms), vec![0, 1]);
        assert_eq!(elevation_schedule(3999, 5000, &ms), vec![0, 1]);
        assert_eq!(elevation_schedule(4000, 5000, &ms), vec![0, 1, 2]);
    }

    #[test]
    fn background_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_background(&mut rng, false), Vector3::repeat(1.0));
        let mut mean = Vector3::zeros();
        let n = 100_000;
        for _ in 0..n {
            mean += sample_background(&mut rng, true);
        }
        mean /= n as f64;
        for c in 0..3 {
            assert!((mean[c] - 0.5).abs() < 0.01, "channel {c}: {}", mean[c]);
        }
    }

    #[test]
    fn step_determinism_and_shared_background() {
        let dataset = tiny_dataset(0.01);
        let config = tiny_config(AblationMode::Dual);
        let mut a = init_models(&config).unwrap();
        let mut b = a.clone();
        let oa = train_step(&mut a, &dataset, &config, None).unwrap();
        let ob = train_step(&mut b, &dataset, &config, None).unwrap();
        assert_eq!(oa.breakdown.total, ob.breakdown.total);
        assert_eq!(oa.background, ob.background);
        assert_eq!(a, b);
    }

    #[test]
    fn identical_seeds_keep_models_identical_over_many_steps() {
        let dataset = tiny_dataset(0.02);
        let mut config = tiny_config(AblationMode::Dual);
        config.seed1 = 11;
        config.seed2 = 11;
        config.lambda_l = 0.0;
        let mut state = init_models(&config).unwrap();
        for _ in 0..100 {
            let out = train_step(&mut state, &dataset, &config, None).unwrap();
            assert!(out.uncertainty.data.iter().all(|&v| v == 0.0));
        }
        assert_eq!(state.models[0].cloud, state.models[1].cloud);
    }

    #[test]
    fn dual_with_lambda_zero_matches_baseline_updates() {
        let dataset = tiny_dataset(0.02);
        let mut dual_cfg = tiny_config(AblationMode::Dual);
        dual_cfg.lambda = 0.0;
        let mut base_cfg = dual_cfg.clone();
        base_cfg.ablation_mode = AblationMode::SingleBaseline;

        let mut dual = init_models(&dual_cfg).unwrap();
        let mut base = init_models(&base_cfg).unwrap();
        assert_eq!(dual.models[0].cloud, base.models[0].cloud);
        for _ in 0..30 {
            train_step(&mut dual, &dataset, &dual_cfg, None).unwrap();
            train_step(&mut base, &dataset, &base_cfg, None).unwrap();
        }
        assert_eq!(dual.models[0].cloud, base.models[0].cloud);
    }

    #[test]
    fn baseline_has_single_model_and_zero_uncertainty() {
        let dataset = tiny_dataset(0.02);
        let config = tiny_config(AblationMode::SingleBaseline);
        let mut state = init_models(&config).unwrap();
        assert_eq!(state.models.len(), 1);
        let out = train_step(&mut state, &dataset, &config, None).unwrap();
        assert!(out.uncertainty.data.iter().all(|&v| v == 0.0));
        assert_eq!(out.breakdown.l1_u_model2, 0.0);
    }

    #[test]
    fn learnable_variance_mode_updates_variance() {
        let dataset = tiny_dataset(0.02);
        let config = tiny_config(AblationMode::LearnableVariance);
        let mut state = init_models(&config).unwrap();
        let before = state.models[0].variance_logits.clone().unwrap();
        for _ in 0..5 {
            train_step(&mut state, &dataset, &config, None).unwrap();
        }
        let after = state.models[0].variance_logits.clone().unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn ensemble_mode_runs_with_k_models() {
        let dataset = tiny_dataset(0.02);
        let mut config = tiny_config(AblationMode::EnsembleK);
        config.ensemble_k = 3;
        let mut state = init_models(&config).unwrap();
        assert_eq!(state.models.len(), 3);
        let out = train_step(&mut state, &dataset, &config, None).unwrap();
        assert!(out.breakdown.total.is_finite());
        assert!(out.uncertainty.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn densify_splits_large_high_gradient_point() {
        let config = tiny_config(AblationMode::SingleBaseline);
        let mut state = init_models(&config).unwrap();
        state.scene_extent = 4.0;
        let model = &mut state.models[0];
        // Make point 0 large (scale above 0.01·extent) with a big gradient.
        model.cloud.log_scales[0] = Vector3::repeat(0.1f64.ln());
        model.grad_accum[0] = 1.0;
        model.grad_count[0] = 1;
        let n_before = model.cloud.len();
        densify_and_prune(&mut state, &config);
        let model = &state.models[0];
        assert_eq!(model.cloud.len(), n_before + 1);
        let expected_scale = 0.1 / 1.6;
        let last = model.cloud.activated_scale(model.cloud.len() - 1).x;
        assert!((last - expected_scale).abs() < 1e-12);
        // Children live near the parent footprint.
        let parent_pos = model.cloud.positions[model.cloud.len() - 1];
        assert!(parent_pos.norm() < 1.6);
        assert_eq!(model.adam_position.m.len(), model.cloud.len() * 3);
    }

    #[test]
    fn densify_clones_small_high_gradient_point() {
        let config = tiny_config(AblationMode::SingleBaseline);
        let mut state = init_models(&config).unwrap();
        state.scene_extent = 4.0;
        let model = &mut state.models[0];
        model.cloud.log_scales[0] = Vector3::repeat(0.001f64.ln());
        model.grad_accum[0] = 1.0;
        model.grad_count[0] = 1;
        let n_before = model.cloud.len();
        let pos = model.cloud.positions[0];
        densify_and_prune(&mut state, &config);
        let model = &state.models[0];
        assert_eq!(model.cloud.len(), n_before + 1);
        assert_eq!(model.cloud.positions[model.cloud.len() - 1], pos);
    }

    #[test]
    fn densify_prunes_transparent_points_and_only_prunes_on_zero_grads() {
        let config = tiny_config(AblationMode::SingleBaseline);
        let mut state = init_models(&config).unwrap();
        let model = &mut state.models[0];
        let n = model.cloud.len();
        model.cloud.opacity_logits[3] = logit(0.001);
        densify_and_prune(&mut state, &config);
        assert_eq!(state.models[0].cloud.len(), n - 1);
    }

    #[test]
    fn select_output_prefers_better_model_and_breaks_ties_low() {
        let dataset = tiny_dataset(0.0);
        let config = tiny_config(AblationMode::Dual);
        let mut state = init_models(&config).unwrap();
        // Identical models tie; index 0 wins.
        state.models[1].cloud = state.models[0].cloud.clone();
        assert_eq!(select_output_model(&state, &dataset).unwrap(), 0);
        // Make model 2 the true scene; it must win every view.
        state.models[1].cloud = dataset.scene.clone();
        assert_eq!(select_output_model(&state, &dataset).unwrap(), 1);
    }

    #[test]
    fn empty_view_schedule_is_error() {
        let dataset = tiny_dataset(0.0);
        let mut config = tiny_config(AblationMode::Dual);
        config.elevation_milestones = vec![(0.0, vec![9])];
        let mut state = init_models(&config).unwrap();
        match train_step(&mut state, &dataset, &config, None) {
            Err(GsError::EmptyViewSet { .. }) => {}
            other => panic!("expected EmptyViewSet, got {other:?}"),
        }
    }

    #[test]
    fn invalid_milestones_rejected() {
        let mut config = tiny_config(AblationMode::Dual);
        config.resolution_milestones = vec![(0.0, 0.25), (0.0, 0.5)];
        assert!(config.validate().is_err());
        config.resolution_milestones = vec![(0.0, 0.25), (1.5, 0.5)];
        assert!(config.validate().is_err());
    }
}
