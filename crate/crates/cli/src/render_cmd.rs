//! `render`: render a saved model from a single viewpoint or as an orbit
//! sweep with 30°-amplitude sinusoidal elevation.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use gs_core::camera::Camera;
use gs_core::io::{load_cloud, save_image};
use gs_core::render::render;

use crate::util::{parse_background, CliError, CliResult};

#[derive(ClapArgs, Debug)]
pub struct Args {
    /// Model PLY file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output PNG (single view) or directory (orbit mode).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 0.0)]
    pub elevation: f64,
    /// Render an n-frame orbit instead of a single view.
    #[arg(long)]
    pub orbit: Option<usize>,
    #[arg(long, default_value_t = 512)]
    pub size: u32,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 33.8)]
    pub fov: f64,
    /// white | black | r,g,b
    #[arg(long, default_value = "white")]
    pub background: String,
}

pub fn run(args: Args) -> CliResult {
    let background = parse_background(&args.background).map_err(CliError::usage)?;
    let cloud = load_cloud(&args.model)?;

    match args.orbit {
        None => {
            let cam = Camera::new(args.azimuth, args.elevation, args.radius, args.fov, args.size, args.size);
            let out = render(&cloud, &cam, background)?;
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            save_image(&args.out, &out.image, None)?;
            println!("wrote {}", args.out.display());
        }
        Some(n) => {
            if n == 0 {
                return Err(CliError::usage("--orbit needs at least one frame"));
            }
            std::fs::create_dir_all(&args.out)?;
            for k in 0..n {
                let t = 360.0 * k as f64 / n as f64;
                let cam = Camera::new(
                    t,
                    30.0 * t.to_radians().sin(),
                    args.radius,
                    args.fov,
                    args.size,
                    args.size,
                );
                let out = render(&cloud, &cam, background)?;
                let path = args.out.join(format!("frame_{k:03}.png"));
                save_image(&path, &out.image, None)?;
            }
            println!("wrote {n} frames to {}", args.out.display());
        }
    }
    Ok(())
}
