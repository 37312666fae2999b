use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "fracfield",
    version,
    about = "Fractional Gaussian fields on lattices and at scattered sites"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic data set.
    Simulate(SimulateArgs),
    /// Fit either model to a data file.
    Fit(FitArgs),
    /// Tabulate theoretical or empirical variograms.
    Variogram(VariogramArgs),
    /// Run a replicated simulation study.
    Experiment(ExperimentArgs),
    /// Trend removal, both fits and kriging for a float temperature table.
    Argo(ArgoArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    Fld,
    Fgf,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    #[arg(long, default_value_t = 1.5)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Nugget precision.
    #[arg(long, default_value_t = 4.0)]
    pub tau: f64,
    /// Lattice precision scale (fld).
    #[arg(long, default_value_t = 8.0)]
    pub lambda: f64,
    /// Continuum scale (fgf).
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Fixed shift of the lattice operator (fld).
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    /// Keep this many randomly chosen pixels (required for fgf).
    #[arg(long, conflicts_with = "fraction")]
    pub sites: Option<usize>,
    /// Keep each pixel with this probability (fld).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Distance between neighbouring lattice points for fgf site coordinates.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Surface CSV (fld) or site CSV (fgf).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub init_tau: f64,
    /// Initial sigma2 (fgf) or lambda (fld).
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 1.5)]
    pub init_nu: f64,
    #[arg(long, default_value_t = 0.25)]
    pub init_alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    /// Rademacher probes per score evaluation (fld).
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Also write the kriged surface here (fld).
    #[arg(long)]
    pub krige: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ColumnArgs {
    #[arg(long, default_value = "u")]
    pub u_col: String,
    #[arg(long, default_value = "v")]
    pub v_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
    /// Split on runs of whitespace instead of commas.
    #[arg(long)]
    pub whitespace: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariogramMode {
    Continuum,
    Lattice,
    Gap,
    Empirical,
}

#[derive(Args, Debug, Clone)]
pub struct VariogramArgs {
    #[arg(long, value_enum)]
    pub mode: VariogramMode,
    #[arg(long, default_value_t = 1.5)]
    pub nu: f64,
    /// Defaults to 0.1 in gap mode and 0.25 otherwise.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub refinement: usize,
    /// Largest lag; defaults to 20 in gap mode and 10 otherwise.
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub frequencies: usize,
    /// Smoothness values for the gap sweep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1.2,1.3,1.4,1.5,1.6,1.7,1.8"
    )]
    pub nus: Vec<f64>,
    /// Refinements for the gap sweep.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub ms: Vec<usize>,
    /// Site CSV (empirical mode).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Bin edges for the empirical variogram.
    #[arg(long, value_delimiter = ',')]
    pub bins: Option<Vec<f64>>,
    /// Directions in degrees; omit for a single omnidirectional variogram.
    #[arg(long, value_delimiter = ',')]
    pub directions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 22.5)]
    pub angle_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Accuracy,
    Scale,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub which: Study,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Grid side length; defaults to 60 (accuracy) or 128 (scale).
    #[arg(long)]
    pub size: Option<usize>,
    /// Observed sites (accuracy).
    #[arg(long, default_value_t = 1500)]
    pub sites: usize,
    /// Observed fraction (scale).
    #[arg(long, default_value_t = 0.6)]
    pub fraction: f64,
    /// Defaults to 1.25.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// Defaults to 1 (accuracy) or 4 (scale).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 8.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-replicate CSV; the summary goes next to it with a `_summary` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ArgoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 21.0, allow_hyphen_values = true)]
    pub north: f64,
    #[arg(long, default_value_t = -67.0, allow_hyphen_values = true)]
    pub south: f64,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub west: f64,
    #[arg(long, default_value_t = 145.0, allow_hyphen_values = true)]
    pub east: f64,
    #[arg(long, default_value_t = 128)]
    pub rows: usize,
    #[arg(long, default_value_t = 180)]
    pub cols: usize,
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the dense fit at the sites.
    #[arg(long)]
    pub skip_fgf: bool,
    #[arg(long)]
    pub whitespace: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}
