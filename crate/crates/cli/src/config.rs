use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

/// Everything needed to repeat a run. Written as `config.json` next to the
/// outputs and accepted back through `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build a structured mesh and write mesh.json.
    Mesh(MeshArgs),
    /// Solve the forward problem and write electrode potentials.
    Forward(ForwardArgs),
    /// Model comparison and convergence studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Simulate a noisy measurement frame on a fine mesh.
    Synth(SynthArgs),
    /// Estimate conductivity and contacts from a frame.
    #[command(subcommand)]
    Invert(InvertCommand),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MeshArgs {
    #[arg(long, default_value_t = 3)]
    pub level: u32,
    /// 1 or 2.
    #[arg(long, default_value_t = 1)]
    pub order: u8,
    /// Built-in layout name or path to a JSON list of `[start, end]` arcs.
    #[arg(long, default_value = "default8")]
    pub layout: String,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "hat")]
    pub model: String,
    /// Contact height shared by all electrodes.
    #[arg(long, default_value_t = 20.0)]
    pub zeta: f64,
    /// Contact profile JSON; overrides `--model` and `--zeta`.
    #[arg(long)]
    pub contacts: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Phantom JSON; overrides `--sigma`.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ForwardArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Comma separated electrode currents; all reference patterns if absent.
    #[arg(long, allow_hyphen_values = true)]
    pub pattern: Option<String>,
    /// Also write nodal potentials as CSV.
    #[arg(long)]
    pub nodal: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 8)]
    pub level: u32,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lo: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hi: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RateArgs {
    #[arg(long, default_value = "default8")]
    pub layout: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub orders: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "box,hat")]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
    pub levels: Vec<u32>,
    #[arg(long, default_value_t = 8)]
    pub reference: u32,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 20.0)]
    pub zeta_box: f64,
    #[arg(long, default_value_t = 100.0 / 3.0)]
    pub zeta_hat: f64,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum StudyCommand {
    /// Relative difference of box and equal-area hat potentials.
    Difference(SweepArgs),
    /// Box against optimally scaled hat.
    Scaling(SweepArgs),
    /// Electrode potential errors against a reference mesh.
    Rates(RateArgs),
    /// Errors of the shape-derivative integrals.
    Deriv(RateArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "default16")]
    pub layout: String,
    /// Phantom JSON; an insulating disk in a 0.03 background if absent.
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    #[arg(long, default_value = "box")]
    pub model: String,
    #[arg(long, default_value_t = 100.0)]
    pub zeta: f64,
    #[arg(long)]
    pub contacts: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub fine_level: u32,
    /// Level the data will be inverted on.
    #[arg(long, default_value_t = 5)]
    pub level: u32,
    /// Relative to the largest voltage difference.
    #[arg(long, default_value_t = 2e-3)]
    pub noise: f64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub level: u32,
    #[arg(long, default_value = "box")]
    pub model: String,
    #[arg(long, default_value_t = 0.025)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 100.0)]
    pub zeta0: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// JSON with `mean`, `std`, `correlation_length`.
    #[arg(long)]
    pub prior: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InvertCommand {
    Homogeneous(FitArgs),
    Map(MapArgs),
}
