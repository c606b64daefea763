//! `eval`: score a model against the dataset's ground-truth scene on the
//! held-out cameras. `ab`: compare two eval reports view-by-view.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use gs_core::io::load_cloud;
use gs_core::io::load_dataset;
use gs_core::metrics::{ab_report, evaluate, fingerprint_f64s};

use crate::util::{load_report, CliError, CliResult};

#[derive(ClapArgs, Debug)]
pub struct EvalArgs {
    /// Model PLY file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory providing the held-out cameras and the true scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_eval(args: EvalArgs) -> CliResult {
    let dataset = load_dataset(&args.data)?;
    let model = load_cloud(&args.model)?;
    let cameras: Vec<_> = dataset.heldout.iter().map(|h| h.camera).collect();
    if cameras.is_empty() {
        return Err(CliError::usage("dataset has no held-out cameras"));
    }
    let model_fp = fingerprint_f64s(
        model
            .positions
            .iter()
            .flat_map(|p| [p.x, p.y, p.z])
            .chain(model.opacity_logits.iter().copied()),
    );
    let report = evaluate(&model, &dataset.scene, &cameras, &model_fp)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).expect("report json"))?;

    println!("view   psnr(dB)   ssim");
    for (i, (p, s)) in report
        .per_view_psnr
        .iter()
        .zip(&report.per_view_ssim)
        .enumerate()
    {
        println!("{i:>4}   {p:>8.3}   {s:.4}");
    }
    println!(
        "mean   {:>8.3}   {:.4}   (std {:.3} / {:.4}; lpips: {})",
        report.mean_psnr, report.mean_ssim, report.std_psnr, report.std_ssim, report.lpips
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(ClapArgs, Debug)]
pub struct AbArgs {
    /// Run A: eval report file or run directory containing eval.json.
    #[arg(long)]
    pub run_a: PathBuf,
    /// Run B: eval report file or run directory containing eval.json.
    #[arg(long)]
    pub run_b: PathBuf,
    /// Comparison JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_ab(args: AbArgs) -> CliResult {
    let a = load_report(&args.run_a)?;
    let b = load_report(&args.run_b)?;
    let report = ab_report(&a, &b).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).expect("report json"))?;
    println!(
        "views: {}   mean Δpsnr: {:+.4} dB (sign test p = {:.3e})   mean Δssim: {:+.5} (p = {:.3e})",
        report.n_views,
        report.mean_delta_psnr,
        report.sign_test_p_psnr,
        report.mean_delta_ssim,
        report.sign_test_p_ssim
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
