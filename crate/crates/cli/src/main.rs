//! `morphforge`: batch mesh personalization and evaluation.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

mod commands;
mod io;
mod personalize;

use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use morphforge::DemonsParams;

#[derive(Parser)]
#[command(name = "morphforge", version, about = "Registration-based mesh morphing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a closed STL surface into a binary image.
    Voxelize(commands::VoxelizeArgs),
    /// Register two binary images with diffeomorphic demons (fixed space field).
    Register(commands::RegisterArgs),
    /// Invert a displacement field by fixed-point iteration.
    InvertField(commands::InvertArgs),
    /// Pull-back warp an image through a displacement field.
    WarpImage(commands::WarpArgs),
    /// Move mesh nodes through a displacement field.
    Morph(commands::MorphArgs),
    /// Dice and HD95 between two binary images.
    Evaluate(commands::EvaluateArgs),
    /// Per-vertex distance from one surface to another.
    Distmap(commands::DistmapArgs),
    /// Scaled Jacobian of every solid element.
    Jacobian(commands::JacobianArgs),
    /// Channel-class low-pass filter of CSV time series.
    Filter(commands::FilterArgs),
    /// CORA rating of test channels against reference channels.
    Cora(commands::CoraArgs),
    /// Full pipeline from a JSON manifest.
    Personalize(personalize::PersonalizeArgs),
}

/// Demons settings; unset values fall back to defaults for the voxel size.
#[derive(Args, Clone, Debug, Default)]
pub struct DemonsArgs {
    #[arg(long)]
    pub levels: Option<usize>,
    /// Iterations per level, coarsest first, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub iterations: Option<Vec<usize>>,
    #[arg(long)]
    pub sigma_fluid: Option<f64>,
    #[arg(long)]
    pub sigma_diffusion: Option<f64>,
    #[arg(long)]
    pub sigma_presmooth: Option<f64>,
    /// Largest update per iteration, in voxels.
    #[arg(long)]
    pub max_step: Option<f64>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl DemonsArgs {
    pub fn apply(&self, mut p: DemonsParams) -> DemonsParams {
        if let Some(v) = self.levels {
            p.pyramid_levels = v;
            if self.iterations.is_none() {
                p.iterations_per_level
                    .resize(v, *p.iterations_per_level.last().unwrap_or(&25));
            }
        }
        if let Some(v) = &self.iterations {
            p.iterations_per_level = v.clone();
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(
            sigma_fluid,
            sigma_diffusion,
            sigma_presmooth,
            max_step,
            convergence_tol,
            alpha
        );
        p
    }
}

/// Raised for divergence and other numerical breakdowns (exit code 3).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("MORPHFORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("MORPHFORGE_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Voxelize(a) => commands::voxelize(a),
        Command::Register(a) => commands::register(a),
        Command::InvertField(a) => commands::invert(a),
        Command::WarpImage(a) => commands::warp(a),
        Command::Morph(a) => commands::morph(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Distmap(a) => commands::distmap(a),
        Command::Jacobian(a) => commands::jacobian(a),
        Command::Filter(a) => commands::filter(a),
        Command::Cora(a) => commands::cora(a),
        Command::Personalize(a) => personalize::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<NumericalFailure>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

/// Write pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
