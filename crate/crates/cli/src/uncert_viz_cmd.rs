//! `uncert-viz`: render both checkpointed models from a training view and
//! write the min-max-normalized uncertainty map as a grayscale PNG.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use gs_core::io::{list_checkpoints, load_checkpoint, load_dataset, save_image};
use gs_core::loss::{normalize_uncertainty_for_viz, uncertainty_map};
use gs_core::render::render;
use nalgebra::Vector3;

use crate::util::{CliError, CliResult};

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Run directory holding checkpoints/.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint iteration to visualize.
    #[arg(long)]
    pub iter: u64,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset directory; defaults to the one recorded in the run.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training view index to render.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
}

fn data_dir_of_run(run: &PathBuf) -> Option<PathBuf> {
    let text = std::fs::read_to_string(run.join("run_info.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    Some(PathBuf::from(v.get("data")?.as_str()?))
}

pub fn run(args: Args) -> CliResult {
    let ckpt_dir = args.run.join("checkpoints");
    let checkpoints = list_checkpoints(&ckpt_dir);
    if checkpoints.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "no checkpoints in {}",
            ckpt_dir.display()
        )));
    }
    let exact = checkpoints.iter().find(|(it, _)| *it == args.iter);
    let (_, path) = match exact {
        Some(found) => found,
        None => {
            let nearest = checkpoints
                .iter()
                .min_by_key(|(it, _)| it.abs_diff(args.iter))
                .expect("nonempty");
            return Err(CliError::Runtime(anyhow::anyhow!(
                "no checkpoint at iteration {}; nearest available is {}",
                args.iter,
                nearest.0
            )));
        }
    };
    let ckpt = load_checkpoint(path)?;
    if ckpt.state.models.len() < 2 {
        return Err(CliError::usage(
            "this run has a single model; the uncertainty map needs two",
        ));
    }

    let data_dir = match args.data.clone().or_else(|| data_dir_of_run(&args.run)) {
        Some(d) => d,
        None => return Err(CliError::usage("pass --data; the run records no dataset path")),
    };
    let dataset = load_dataset(&data_dir)?;
    if args.view >= dataset.frames.len() {
        return Err(CliError::usage(format!(
            "view {} out of range; dataset has {} frames",
            args.view,
            dataset.frames.len()
        )));
    }

    let cam = dataset.frames[args.view].camera;
    let white = Vector3::repeat(1.0);
    let r1 = render(&ckpt.state.models[0].cloud, &cam, white)?;
    let r2 = render(&ckpt.state.models[1].cloud, &cam, white)?;
    let u = uncertainty_map(&r1.image, &r2.image)?;
    let viz = normalize_uncertainty_for_viz(&u);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_image(&args.out, &viz, None)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
