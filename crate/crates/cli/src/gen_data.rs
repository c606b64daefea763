//! `gen-data`: synthesize a pseudo-label dataset with three orbits plus
//! held-out ground-truth renders.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use gs_core::data::{generate_dataset, DatasetSpec, InconsistencySpec, SceneSpec};
use gs_core::io::save_dataset;

use crate::util::{CliError, CliResult};

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene spec JSON; defaults to the built-in one-sphere-one-box scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Image width/height in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    /// Frames per orbit (three orbits at elevation amplitudes 0°, -20°, 40°).
    #[arg(long, default_value_t = 21)]
    pub frames_per_orbit: usize,
    /// Per-view geometry jitter std, scene units.
    #[arg(long, default_value_t = 0.02)]
    pub jitter: f64,
    /// Per-view color jitter std.
    #[arg(long, default_value_t = 0.0)]
    pub color_jitter: f64,
    /// Seed for the per-view perturbations.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Seed for the ground-truth scene sampling.
    #[arg(long, default_value_t = 1)]
    pub scene_seed: u64,
    /// Number of held-out evaluation views.
    #[arg(long, default_value_t = 36)]
    pub heldout: usize,
    /// Seed for the held-out elevations.
    #[arg(long, default_value_t = 777)]
    pub heldout_seed: u64,
}

pub fn run(args: Args) -> CliResult {
    if args.jitter < 0.0 || args.color_jitter < 0.0 {
        return Err(CliError::usage("jitter values must be nonnegative"));
    }
    let scene: SceneSpec = match &args.scene {
        None => SceneSpec::sphere_and_box(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read scene spec {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("bad scene spec: {e}")))?
        }
    };
    scene
        .validate()
        .map_err(|e| CliError::usage(format!("bad scene spec: {e}")))?;

    let mut spec = DatasetSpec::new(
        scene,
        args.size,
        InconsistencySpec {
            geometry_jitter: args.jitter,
            color_jitter: args.color_jitter,
            seed: args.seed,
        },
    );
    for o in spec.orbits.iter_mut() {
        o.frames_per_orbit = args.frames_per_orbit;
    }
    spec.scene_seed = args.scene_seed;
    spec.heldout_count = args.heldout;
    spec.heldout_seed = args.heldout_seed;

    let dataset = generate_dataset(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    save_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} training frames ({} orbits) and {} held-out views to {}",
        dataset.frames.len(),
        dataset.orbits.len(),
        dataset.heldout.len(),
        args.out.display()
    );
    Ok(())
}
