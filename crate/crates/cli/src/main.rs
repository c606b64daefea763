//! Operator surface for the Gaussian splatting trainer: dataset generation,
//! training, rendering, evaluation, A/B comparison, and uncertainty
//! visualization.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure. Worker
//! parallelism is capped with the GS_THREADS env var (0 or unset = auto).

mod eval_cmd;
mod gen_data;
mod render_cmd;
mod train_cmd;
mod uncert_viz_cmd;
mod util;

use clap::{Parser, Subcommand};
use util::CliError;

#[derive(Parser)]
#[command(name = "gsplat", version, about = "Gaussian splatting with dual-model uncertainty-aware training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pseudo-label dataset.
    GenData(gen_data::Args),
    /// Train on a dataset directory.
    Train(train_cmd::Args),
    /// Render a saved model (single view or orbit sweep).
    Render(render_cmd::Args),
    /// Evaluate a model against the dataset's ground truth.
    Eval(eval_cmd::EvalArgs),
    /// Compare two evaluation reports.
    Ab(eval_cmd::AbArgs),
    /// Visualize the uncertainty map of a checkpoint.
    UncertViz(uncert_viz_cmd::Args),
}

fn init_threads() {
    if let Ok(v) = std::env::var("GS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data::run(args),
        Command::Train(args) => train_cmd::run(args),
        Command::Render(args) => render_cmd::run(args),
        Command::Eval(args) => eval_cmd::run_eval(args),
        Command::Ab(args) => eval_cmd::run_ab(args),
        Command::UncertViz(args) => uncert_viz_cmd::run(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
