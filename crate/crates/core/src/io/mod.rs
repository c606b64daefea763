//! Persistence: PLY clouds, PNG images, dataset directories, JSON-lines
//! metrics logs, key-value config files, and training checkpoints.
//!
//! All binary formats are little-endian and platform-independent; identical
//! inputs produce byte-identical files on every OS.

mod checkpoint;
mod config_file;
mod dataset;
mod metrics_log;
mod ply;
mod png;

pub use checkpoint::{
    checkpoint_path, latest_checkpoint, list_checkpoints, load_checkpoint, save_checkpoint,
    Checkpoint,
};
pub use config_file::{format_config, parse_config, update_config_from_str};
pub use dataset::{load_dataset, save_dataset};
pub use metrics_log::{read_metrics, MetricsLogger, MetricsRead, MetricsRecord};
pub use ply::{load_cloud, save_cloud};
pub use png::{load_image, save_image};
