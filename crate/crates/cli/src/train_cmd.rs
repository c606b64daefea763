//! `train`: run the dual-model optimization on a dataset directory, writing
//! models, metrics, checkpoints, and the final uncertainty map.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args as ClapArgs;
use gs_core::io::{
    checkpoint_path, format_config, latest_checkpoint, load_checkpoint, load_dataset,
    read_metrics, save_checkpoint, save_cloud, save_image, update_config_from_str, MetricsLogger,
    MetricsRecord,
};
use gs_core::loss::normalize_uncertainty_for_viz;
use gs_core::train::{init_models, select_output_model, train_step, AblationMode, TrainConfig};

use crate::util::{CliError, CliResult};

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Dataset directory (from `gen-data`).
    #[arg(long)]
    pub data: PathBuf,
    /// Run output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Key = value config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// dual | baseline | learnable | ensemble-k
    #[arg(long)]
    pub mode: Option<String>,
    /// Total optimization iterations (also rescales the densification stop
    /// to half the run unless the config file pins it).
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed1: Option<u64>,
    #[arg(long)]
    pub seed2: Option<u64>,
    /// Uncertainty amplification λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub init_points: Option<usize>,
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Models in ensemble mode.
    #[arg(long)]
    pub ensemble_k: Option<usize>,
    /// Train against a fixed white background instead of random colors.
    #[arg(long)]
    pub no_random_bg: bool,
    /// Resume from the latest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Print a progress line every N iterations (0 disables).
    #[arg(long, default_value_t = 200)]
    pub log_every: u64,
}

fn build_config(args: &Args) -> Result<TrainConfig, CliError> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        update_config_from_str(&mut config, &text)
            .map_err(|e| CliError::usage(format!("bad config file: {e}")))?;
    }
    if let Some(iters) = args.iters {
        let file_set_stop = config.densify_stop != TrainConfig::default().densify_stop;
        config.total_iters = iters;
        if !file_set_stop {
            config.densify_stop = iters / 2;
        }
    }
    if let Some(mode) = &args.mode {
        let normalized = mode.replace('-', "_");
        config.ablation_mode = normalized
            .parse::<AblationMode>()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    if let Some(s) = args.seed1 {
        config.seed1 = s;
    }
    if let Some(s) = args.seed2 {
        config.seed2 = s;
    }
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(n) = args.init_points {
        config.init_points = n;
    }
    if let Some(n) = args.max_points {
        config.max_points = n;
    }
    if let Some(k) = args.ensemble_k {
        config.ensemble_k = k;
    }
    if args.no_random_bg {
        config.random_background = false;
    }
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(config)
}

/// Drop metrics records past the checkpoint we resume from so the log stays
/// strictly increasing.
fn truncate_metrics(path: &Path, up_to: u64) -> CliResult {
    if !path.is_file() {
        return Ok(());
    }
    let read = read_metrics(path)?;
    let mut logger = MetricsLogger::create(path)?;
    for r in read.records.iter().filter(|r| r.iteration < up_to) {
        logger.append(r)?;
    }
    logger.flush()?;
    Ok(())
}

pub fn run(args: Args) -> CliResult {
    let dataset = load_dataset(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");

    let (config, mut state) = if args.resume {
        let (iter, path) = latest_checkpoint(&ckpt_dir).ok_or_else(|| {
            CliError::Runtime(anyhow::anyhow!(
                "no checkpoint to resume from in {}",
                ckpt_dir.display()
            ))
        })?;
        let ckpt = load_checkpoint(&path)?;
        eprintln!("resuming from iteration {iter}");
        truncate_metrics(&args.out.join("metrics.jsonl"), iter)?;
        (ckpt.config, ckpt.state)
    } else {
        let config = build_config(&args)?;
        let state = init_models(&config)?;
        (config, state)
    };

    // Echo the effective config and the dataset location into the run dir.
    std::fs::write(args.out.join("effective_config.txt"), format_config(&config))?;
    let data_abs = std::fs::canonicalize(&args.data).unwrap_or_else(|_| args.data.clone());
    std::fs::write(
        args.out.join("run_info.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "data": data_abs }))
            .expect("static json"),
    )?;
    if config.lambda_l > 0.0 {
        eprintln!(
            "note: lambda_l = {} but no perceptual-loss plugin is registered; the term is inactive",
            config.lambda_l
        );
    }

    let mut logger = MetricsLogger::append_to(&args.out.join("metrics.jsonl"))?;
    let mut last_step = None;
    while state.iteration < config.total_iters {
        let t0 = Instant::now();
        let out = train_step(&mut state, &dataset, &config, None)?;
        let ms = t0.elapsed().as_secs_f64() * 1000.0;
        let iter_done = state.iteration;
        logger.append(&MetricsRecord::from_breakdown(
            iter_done,
            &out.breakdown,
            out.point_counts.clone(),
            out.resolution_ratio,
            out.active_orbits.clone(),
            ms,
        ))?;
        if args.log_every > 0 && (iter_done % args.log_every == 0 || iter_done == config.total_iters)
        {
            eprintln!(
                "iter {}/{}  loss {:.5}  points {:?}  ratio {}",
                iter_done,
                config.total_iters,
                out.breakdown.total,
                out.point_counts,
                out.resolution_ratio
            );
        }
        if config.checkpoint_interval > 0 && iter_done % config.checkpoint_interval == 0 {
            save_checkpoint(&checkpoint_path(&ckpt_dir, iter_done), &config, &state)?;
            logger.flush()?;
        }
        last_step = Some(out);
    }
    save_checkpoint(&checkpoint_path(&ckpt_dir, state.iteration), &config, &state)?;
    logger.flush()?;

    for (i, model) in state.models.iter().enumerate() {
        save_cloud(&args.out.join(format!("model{}.ply", i + 1)), &model.cloud)?;
    }
    let selected = select_output_model(&state, &dataset)?;
    std::fs::write(
        args.out.join("selected.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "selected_index": selected,
            "selected_file": format!("model{}.ply", selected + 1),
        }))
        .expect("static json"),
    )?;

    if let Some(step) = last_step {
        let viz = normalize_uncertainty_for_viz(&step.uncertainty);
        save_image(&args.out.join("uncertainty_final.png"), &viz, None)?;
    }

    println!(
        "trained {} iterations; selected model{} ({} points); outputs in {}",
        state.iteration,
        selected + 1,
        state.models[selected].cloud.len(),
        args.out.display()
    );
    Ok(())
}
