use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Format;

/// Analysis chain for a 3-d scanning trapped-ion field probe in a
/// surface-electrode Penning trap. Files on disk use µm, MHz and V/m and
/// start with the line `# penning-probe-schema v1 kind=<kind>`.
#[derive(Debug, Parser)]
#[command(name = "penning-probe", version)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: `out` in the config, else ./out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed for commands that draw samples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Format of report tables; plot tables are always CSV.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate ωc, ω₊, ω₋ and ωz, or check a quoted spectrum.
    Modes(ModesArgs),
    /// Stray fields from paired two-frequency camera readings.
    Strayfield(StrayFieldArgs),
    /// Regularized dipole-density map from stray-field samples.
    Dipoles(DipolesArgs),
    /// Distance or frequency scaling fits of heating rates.
    Noisefit(NoiseFitArgs),
    /// Magnetic-field shifts and gradients from Rabi frequency scans.
    Magnetics(MagneticsArgs),
    /// Generate a synthetic dataset from a scenario.
    Synth(SynthArgs),
    /// Voltage waveform for a straight transport.
    Transport(TransportArgs),
    /// Write or check a trap layout file.
    Layout(LayoutArgs),
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    /// Magnetic field, T (overrides config and layout).
    #[arg(long)]
    pub b_tesla: Option<f64>,
    /// Axial frequencies, MHz (overrides config).
    #[arg(long = "fz", value_delimiter = ',')]
    pub f_z_mhz: Vec<f64>,
    /// CSV of (b_t, f_z_mhz) rows, kind=modes-input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Quoted spectrum "fc,f+,f-,fz" in MHz to check against the ideal-trap identities.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub validate: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct StrayFieldArgs {
    /// Readings CSV, kind=readings.
    #[arg(long)]
    pub readings: PathBuf,
}

#[derive(Debug, Args)]
pub struct DipolesArgs {
    /// Field samples CSV, kind=fields.
    #[arg(long)]
    pub fields: PathBuf,
    /// Fixed regularization weight; L-curve corner when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scaling {
    Distance,
    Frequency,
}

#[derive(Debug, Args)]
pub struct NoiseFitArgs {
    /// Heating records CSV, kind=heating.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum, default_value_t = Scaling::Distance)]
    pub scaling: Scaling,
}

#[derive(Debug, Args)]
pub struct MagneticsArgs {
    /// Rabi scans CSV, kind=rabi.
    #[arg(long)]
    pub scans: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario TOML; the built-in scenario when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    /// Start position "x,y,z" in µm.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub from: Option<Vec<f64>>,
    /// End position "x,y,z" in µm.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub to: Option<Vec<f64>>,
    /// Transport speed, m/s.
    #[arg(long)]
    pub speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    /// Layout file to validate instead of writing the configured one.
    #[arg(long)]
    pub check: Option<PathBuf>,
}
