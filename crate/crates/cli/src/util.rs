//! Shared CLI plumbing: error-to-exit-code mapping and small parsers.

use std::path::{Path, PathBuf};

use gs_core::metrics::EvalReport;
use nalgebra::Vector3;

/// Usage problems exit 2; runtime failures exit 1.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<gs_core::GsError> for CliError {
    fn from(e: gs_core::GsError) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

pub type CliResult = Result<(), CliError>;

/// `white`, `black`, or `r,g,b` with components in [0,1].
pub fn parse_background(s: &str) -> Result<Vector3<f64>, String> {
    match s {
        "white" => return Ok(Vector3::repeat(1.0)),
        "black" => return Ok(Vector3::repeat(0.0)),
        _ => {}
    }
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected `white`, `black`, or `r,g,b`, got `{s}`"));
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("bad background component `{p}`"))?;
        if !(0.0..=1.0).contains(&v[i]) {
            return Err(format!("background component `{p}` outside [0,1]"));
        }
    }
    Ok(v)
}

/// Accept either an eval report file or a run directory containing
/// `eval.json`.
pub fn load_report(path: &Path) -> Result<EvalReport, CliError> {
    let file: PathBuf = if path.is_dir() {
        path.join("eval.json")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&file).map_err(|e| {
        CliError::Runtime(anyhow::anyhow!("cannot read report {}: {e}", file.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("bad report {}: {e}", file.display())))
}
