use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "spade", version, about = "Two-source superresolution with Hermite-Gauss mode sorters")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Length unit of scene arguments and of lengths in result tables.
    #[arg(long, global = true, value_enum, default_value_t = Units::W0)]
    pub units: Units,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    W0,
    Um,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Sample the ideal sorter response as a calibration CSV.
    IdealCalib(IdealCalibArgs),
    /// Fit polynomial response curves to a calibration CSV.
    Fit(FitArgs),
    /// Simulate binned observations, or a single-source calibration series.
    Simulate(SimulateArgs),
    /// Build indistinguishable two-source data from single-source series.
    Emulate(EmulateArgs),
    /// Estimate (d, c, p) for every bin and summarize per scene.
    Estimate(EstimateArgs),
    /// Fisher information and Cramer-Rao bounds over a scene grid.
    CrbSweep(CrbSweepArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LayoutArgs {
    /// Use one sorter only.
    #[arg(long)]
    pub no_dual: bool,

    /// Lateral shift of the second sorter, in w0.
    #[arg(long, default_value_t = 0.3)]
    pub shift2: f64,

    /// Fraction of the light sent to the first sorter.
    #[arg(long, default_value_t = 0.5)]
    pub split1: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    /// Fitted response model (JSON from `fit`); the ideal sorter otherwise.
    #[arg(long)]
    pub calibration: Option<PathBuf>,

    /// Give source two a displaced, attenuated copy of the ideal curves.
    #[arg(long, conflicts_with = "calibration")]
    pub twin: bool,

    /// Displacement of the twin curves, in w0.
    #[arg(long, default_value_t = 0.02)]
    pub offset: f64,

    /// Per-mode attenuation amplitude of the twin curves.
    #[arg(long, default_value_t = 0.01)]
    pub perturbation: f64,

    /// Restrict d >= 0, for indistinguishable sources.
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SceneArgs {
    /// Scene as `d,c,p`; repeatable.
    #[arg(long = "scene", value_name = "D,C,P")]
    pub scenes: Vec<String>,

    /// JSON file with a list of `{"d": .., "c": .., "p": ..}` scenes.
    #[arg(long)]
    pub scene_file: Option<PathBuf>,

    /// One of the measurement-campaign ensembles.
    #[arg(long, value_enum)]
    pub ensemble: Option<EnsembleArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleArg {
    Distinguishable,
    Indistinguishable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseArg {
    Shot,
    Gaussian,
    Combined,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NoiseArgs {
    #[arg(long, value_enum, default_value_t = NoiseArg::Shot)]
    pub noise: NoiseArg,

    /// Signal photons per bin.
    #[arg(long, default_value_t = 1e8)]
    pub photons: f64,

    /// Additive noise standard deviation per mode, one value or one per mode.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,

    #[arg(long, default_value_t = 100)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct IdealCalibArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,

    /// Also write a second source block with displaced, attenuated curves.
    #[arg(long)]
    pub distinguishable: bool,

    /// Displacement of source two's curves, in w0.
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,

    /// Per-mode attenuation amplitude of source two's curves.
    #[arg(long, default_value_t = 0.01)]
    pub perturbation: f64,

    #[arg(long, default_value_t = 61)]
    pub points: usize,

    /// Scan covers [-half_range, half_range], in w0.
    #[arg(long, default_value_t = 0.35)]
    pub half_range: f64,

    #[arg(long, default_value = "calibration.csv")]
    pub output: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Calibration CSV.
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, default_value_t = 12)]
    pub degree: usize,

    /// Residual RMS above which a curve is flagged.
    #[arg(long, default_value_t = 5e-4)]
    pub rms_gate: f64,

    /// Use source one's curves for source two even if both were scanned.
    #[arg(long)]
    pub aliased: bool,

    #[arg(long, default_value = "model.json")]
    pub output: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub scenes: SceneArgs,

    #[command(flatten)]
    pub noise: NoiseArgs,

    /// Simulate source one alone at the calibration positions instead.
    #[arg(long)]
    pub scan: bool,

    #[arg(long, default_value_t = 61)]
    pub points: usize,

    #[arg(long, default_value_t = 0.35)]
    pub half_range: f64,

    #[arg(long, default_value = "observations.csv")]
    pub output: String,
}

#[derive(Debug, Args, Serialize)]
pub struct EmulateArgs {
    /// Single-source time-series CSV (from `simulate --scan`).
    #[arg(long)]
    pub series: PathBuf,

    /// Fitted model supplying the means; the nearest series' own means
    /// otherwise.
    #[arg(long)]
    pub calibration: Option<PathBuf>,

    #[command(flatten)]
    pub scenes: SceneArgs,

    #[arg(long, default_value = "observations.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatePreset {
    /// Distinguishable ensemble, twin curves, simulated Gaussian noise.
    Fig3,
    /// Indistinguishable ensemble emulated from a noisy ideal calibration.
    Fig4,
    /// Adds the per-separation bias and sensitivity table.
    TableA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceArg {
    /// Sample covariance of each scene's bins.
    Estimated,
    Identity,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Observations CSV; not needed with `--preset fig3|fig4`.
    #[arg(long)]
    pub input: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub preset: Option<EstimatePreset>,

    #[command(flatten)]
    pub model: ModelArgs,

    #[arg(long, value_enum, default_value_t = CovarianceArg::Estimated)]
    pub covariance: CovarianceArg,

    /// JSON optimizer settings; missing keys keep their defaults.
    #[arg(long)]
    pub optimizer: Option<PathBuf>,

    /// Bins per scene for the fig3 and fig4 presets.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,

    /// Additive noise per mode for the fig3 and fig4 presets.
    #[arg(long, default_value_t = 1e-5)]
    pub sigma: f64,

    #[arg(long, default_value = "estimates")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPreset {
    Fig1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcesArg {
    Distinguishable,
    Indistinguishable,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigArg {
    #[value(name = "1mplc")]
    #[serde(rename = "1mplc")]
    One,
    #[value(name = "2mplc")]
    #[serde(rename = "2mplc")]
    Two,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct CrbSweepArgs {
    #[arg(long, value_enum, default_value_t = SweepPreset::Fig1)]
    pub preset: SweepPreset,

    #[arg(long, value_enum, default_value_t = SourcesArg::Both)]
    pub sources: SourcesArg,

    #[arg(long, value_enum, default_value_t = ConfigArg::Both)]
    pub config: ConfigArg,

    /// Shot-noise photon budget; ignored with `--sigma`.
    #[arg(long, default_value_t = 1e11)]
    pub photons: f64,

    /// Use a Gaussian noise model with this per-mode standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,

    #[arg(long, default_value_t = 0.3)]
    pub shift2: f64,

    #[arg(long, default_value_t = 0.02)]
    pub offset: f64,

    #[arg(long, default_value_t = 0.01)]
    pub perturbation: f64,
}
