use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "surfloss",
    version,
    about = "Surface loss participation and loss fitting for planar qubits"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed for synthesis and bootstrap [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of mesh levels for participation runs [default: 3]
    #[arg(long, global = true)]
    pub levels: Option<u32>,
    /// Lossy layer thickness in nm [default: 3]
    #[arg(long = "layer-t", global = true, value_name = "NM")]
    pub layer_t: Option<f64>,
    /// Lossy layer relative permittivity [default: 6.2]
    #[arg(long = "layer-eps", global = true, value_name = "X")]
    pub layer_eps: Option<f64>,
    /// Fitted channels, comma separated; `+` merges interfaces [default: SV]
    #[arg(long, global = true, value_name = "LIST")]
    pub channels: Option<String>,
    /// Write results even when mesh extrapolation is unreliable
    #[arg(long, global = true)]
    pub force: bool,
    /// Only print errors
    #[arg(long, global = true)]
    pub quiet: bool,
    /// JSON file with any of: out, seed, levels, layer_t_nm, layer_eps,
    /// channels, force, quiet
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write reference design geometry files
    Geometry {
        /// Designs to export [default: all]
        designs: Vec<String>,
        /// Uniform scale factor applied to every dimension
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Solve designs over mesh levels and write loss sensitivities
    Participation {
        /// Geometry JSON files or reference design names
        #[arg(required = true)]
        geometry: Vec<String>,
        /// Coarsest mesh level
        #[arg(long, default_value_t = 0)]
        base_level: u32,
    },
    /// Generate a synthetic measurement file from the loss model
    Synth {
        /// Sensitivity CSV
        #[arg(long)]
        sensitivities: PathBuf,
        /// Qubit frequency in GHz
        #[arg(long = "freq-ghz")]
        freq_ghz: String,
        /// Total number of devices, assigned to designs round-robin
        #[arg(long, default_value_t = 35)]
        devices: usize,
        /// Number of wafer labels
        #[arg(long, default_value_t = 6)]
        wafers: usize,
        /// Relative lognormal scatter of Q
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Substrate-metal loss product t*tan(delta) in m
        #[arg(long = "x-sm", default_value_t = 0.0)]
        x_sm: f64,
        /// Substrate-vacuum loss product in m
        #[arg(long = "x-sv", default_value_t = 1.6e-11)]
        x_sv: f64,
        /// Metal-vacuum loss product in m
        #[arg(long = "x-mv", default_value_t = 0.0)]
        x_mv: f64,
        /// Background quality factor; 0 disables the background
        #[arg(long = "q-bulk", default_value_t = 3e6)]
        q_bulk: f64,
        #[arg(long, default_value = "other")]
        substrate: String,
        #[arg(long, default_value = "synthetic")]
        process: String,
    },
    /// Fit measured Q to the loss model
    Fit {
        /// Measurement CSV
        #[arg(long)]
        measurements: PathBuf,
        /// Sensitivity CSV
        #[arg(long)]
        sensitivities: PathBuf,
        /// Leave out the background term
        #[arg(long)]
        no_bulk: bool,
        /// Weights: `model` (Q^2 of the fitted model) or `measured`
        #[arg(long, default_value = "model")]
        weighting: String,
        /// Give every wafer the same total weight
        #[arg(long)]
        balance_wafers: bool,
        /// Bootstrap resamples; 0 skips the bootstrap
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        /// Two-sided confidence level
        #[arg(long, default_value_t = 0.9)]
        ci_level: f64,
        /// Accept measurement designs that are not reference designs
        #[arg(long)]
        allow_custom: bool,
    },
    /// Choose the most informative subset of designs
    Select {
        /// Sensitivity CSV
        #[arg(long)]
        sensitivities: PathBuf,
        /// Subset size
        #[arg(short)]
        k: usize,
    },
    /// Summarise a fit report
    Report {
        /// Fit report JSON
        report: PathBuf,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    out: Option<PathBuf>,
    seed: Option<u64>,
    levels: Option<u32>,
    layer_t_nm: Option<f64>,
    layer_eps: Option<f64>,
    channels: Option<String>,
    force: Option<bool>,
    quiet: Option<bool>,
}

/// Effective global settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub out: PathBuf,
    pub seed: u64,
    pub levels: u32,
    /// m
    pub layer_thickness: f64,
    pub layer_eps: f64,
    pub channels: String,
    pub force: bool,
    pub quiet: bool,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => read_config(path)?,
            None => ConfigFile::default(),
        };
        let s = Settings {
            out: args
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from(".")),
            seed: args.seed.or(file.seed).unwrap_or(0),
            levels: args.levels.or(file.levels).unwrap_or(3),
            layer_thickness: args.layer_t.or(file.layer_t_nm).unwrap_or(3.0) / 1e9,
            layer_eps: args
                .layer_eps
                .or(file.layer_eps)
                .unwrap_or(surfloss::geometry::DEFAULT_LAYER_EPS),
            channels: args
                .channels
                .clone()
                .or(file.channels)
                .unwrap_or_else(|| "SV".into()),
            force: args.force || file.force.unwrap_or(false),
            quiet: args.quiet || file.quiet.unwrap_or(false),
        };
        if s.levels == 0 {
            return Err(CliError::Usage("--levels must be at least 1".into()));
        }
        if !(s.layer_thickness > 0.0 && s.layer_thickness.is_finite()) {
            return Err(CliError::Usage("--layer-t must be positive".into()));
        }
        if !(s.layer_eps >= 1.0 && s.layer_eps.is_finite()) {
            return Err(CliError::Usage("--layer-eps must be at least 1".into()));
        }
        Ok(s)
    }
}

fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))
}
