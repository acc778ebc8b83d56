use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vibroloc::eval::{GroupKey, ScenarioFilter};
use vibroloc::signal::recording::Material;

#[derive(Debug, Parser)]
#[command(name = "vibroloc", version, about = "Vibro-acoustic contact localization on a simulated rig")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scene TOML; the built-in default scene otherwise.
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    /// Dataset manifest (JSONL) to read.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of training seeds, starting at --seed.
    #[arg(long, global = true, default_value_t = 1)]
    pub seeds: usize,
    /// Config file with pipeline, `model.*` and `train.*` keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides a config key; wins over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Material used as the test set.
    #[arg(long, global = true)]
    pub hold_out: Option<Material>,
    /// fixed, moving or both.
    #[arg(long, global = true, default_value = "both")]
    pub scenario: ScenarioFilter,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset (WAV files plus manifest).
    Simulate(SimulateArgs),
    /// Error versus feature sample rate and STFT window size.
    Sweep(SweepArgs),
    /// Order and orient the strokes of drawings.
    Plan(PlanArgs),
    /// Train one model per seed and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate checkpoints or a reference predictor on a manifest.
    Eval(EvalArgs),
    /// Print recording and tensor metadata and write magnitude spectra.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Impulse,
    Stroke,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "impulse")]
    pub kind: DataKind,
    /// Impulses per material.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Comma-separated; all four by default.
    #[arg(long, value_delimiter = ',')]
    pub materials: Vec<Material>,
    /// Impulse sensor noise; the scene's white noise level by default.
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Drawings per (material, scenario) cell.
    #[arg(long, default_value_t = 10)]
    pub drawings: usize,
    #[arg(long, default_value_t = 3)]
    pub strokes_per_drawing: usize,
    /// Synthetic drawing categories; defaults to --drawings.
    #[arg(long)]
    pub categories: Option<usize>,
    /// Quick Draw simplified NDJSON to draw instead of synthetic shapes.
    #[arg(long)]
    pub quickdraw: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4000u32, 20000])]
    pub rates: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize])]
    pub n_ffts: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Quick Draw simplified NDJSON; synthetic drawings otherwise.
    #[arg(long)]
    pub quickdraw: Option<PathBuf>,
    /// Synthetic drawings to plan.
    #[arg(long, default_value_t = 1)]
    pub drawings: usize,
    /// Strokes per synthetic drawing.
    #[arg(long, default_value_t = 5)]
    pub strokes: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Test fraction of sources when nothing is held out (impulse data).
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Validation fraction of training sources (impulse data).
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubPredictor {
    /// Returns every target exactly.
    Perfect,
    /// Always predicts the workspace center.
    Center,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; repeat for several seeds.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Reference predictor instead of a checkpoint.
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    pub predictor: Option<StubPredictor>,
    /// Grouping of the stats table: material, view, region, scenario, seed.
    #[arg(long, value_delimiter = ',', default_value = "material")]
    pub group_by: Vec<GroupKey>,
    /// Also write one trajectory CSV per stroke recording.
    #[arg(long)]
    pub trajectories: bool,
    /// Moving-average window (chunks) for trajectories.
    #[arg(long)]
    pub smooth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Manifest id; the first entry by default.
    #[arg(long)]
    pub id: Option<String>,
    /// Upper edge for the reported energy fraction.
    #[arg(long, default_value_t = 20_000.0)]
    pub cutoff_hz: f64,
}
