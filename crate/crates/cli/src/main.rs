mod commands;
mod fixture;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metric_align::Error;
use serde::{Deserialize, Serialize};

/// Metric-scale object alignment, query pose estimation, dataset generation
/// and evaluation.
#[derive(Parser)]
#[command(name = "metric-align", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a template bundle of a mesh.
    Templates(TemplatesArgs),
    /// Align a normalized mesh to an anchor observation at metric scale.
    Align(AlignArgs),
    /// Estimate the pose of a metric mesh in a query observation.
    Pose(PoseArgs),
    /// Relative camera pose between an anchor and a query estimate.
    Relpose(RelposeArgs),
    /// Generate a synthetic multi-object dataset.
    Gen(GenArgs),
    /// Pose-distribution histograms of a generated dataset.
    Stats(StatsArgs),
    /// Score pose estimates against a generated dataset.
    Eval(EvalArgs),
    /// Write a synthetic anchor/query fixture with ground truth.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MatcherKind {
    /// Ground-truth correspondences from the observation's `gt.json`.
    Oracle,
    #[default]
    DepthPatch,
}

#[derive(Args)]
pub struct TemplatesArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Intrinsics JSON ({fx, fy, cx, cy, width, height}).
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Number of Fibonacci viewpoints.
    #[arg(long)]
    pub views: Option<usize>,
    /// Use the six axis-aligned viewpoints instead.
    #[arg(long)]
    pub octahedral: bool,
    /// Render the mesh as loaded instead of normalizing it.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Observation directory (depth.png, mask.png, intrinsics.json).
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub matcher: Option<MatcherKind>,
    /// Ground-truth pose for the oracle matcher; defaults to `<anchor>/gt.json`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Keep the coarse scale (ablation).
    #[arg(long)]
    pub no_rescale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metric mesh written by `align`.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub matcher: Option<MatcherKind>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RelposeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Anchor pose JSON (camera-from-object).
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    /// Query pose JSON (camera-from-object).
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target mesh; the built-in block is used when absent.
    #[arg(long)]
    pub target_mesh: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// CSV rows: scene, image, obj, 9 rotation values row-major, 3
    /// translation values in meters.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Stable process exit codes.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::EmptyRender => 3,
        Error::Format(_)
        | Error::InvalidConfig(_)
        | Error::InvalidMesh(_)
        | Error::InvalidIntrinsics(_)
        | Error::InvalidRotation(_)
        | Error::NonFinite => 5,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("METRIC_ALIGN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let result = match cli.command {
        Command::Templates(a) => commands::templates(a),
        Command::Align(a) => commands::align(a),
        Command::Pose(a) => commands::pose(a),
        Command::Relpose(a) => commands::relpose(a),
        Command::Gen(a) => commands::gen(a),
        Command::Stats(a) => commands::stats(a),
        Command::Eval(a) => commands::eval(a),
        Command::Fixture(a) => fixture::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
