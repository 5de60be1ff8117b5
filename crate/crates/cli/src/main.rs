//! `spadsketch`: generate ROMs, simulate acquisitions, reconstruct depth
//! maps and run parameter sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{NumOr, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration values. Exit code 2.
    Config(String),
    /// Unreadable, malformed or unwritable files. Exit code 3.
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<sketch_core::Error> for CliError {
    fn from(e: sketch_core::Error) -> Self {
        use sketch_core::Error;
        match e {
            Error::Config(m) | Error::Usage(m) => CliError::Config(m),
            Error::Format(m) => CliError::Io(format!("malformed file: {m}")),
            Error::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "spadsketch", version, about = "Spline-sketch compression for SPAD LiDAR")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// p1, p2 or fourier.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    lut_depth: Option<usize>,
    #[arg(long, global = true)]
    total_bits: Option<u32>,
    #[arg(long, global = true)]
    frac_bits: Option<u32>,
    #[arg(long, global = true)]
    fmax: Option<u32>,
    #[arg(long, global = true)]
    rows: Option<usize>,
    #[arg(long, global = true)]
    cols: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the sketch ROMs of all three bases and print their checksums.
    Genlut,
    /// Simulate fmax frames and write timestamps, sketches and ground truth.
    Acquire(AcquireArgs),
    /// Turn a sketch file into a depth map, optionally scoring it.
    Reconstruct(ReconstructArgs),
    /// Run one acquisition per value of a parameter and tabulate the errors.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct AcquireArgs {
    /// uniform, two_depth or ramp.
    #[arg(long)]
    scene: Option<String>,
    /// Target bin of a uniform scene.
    #[arg(long)]
    tof_bins: Option<f64>,
    #[arg(long)]
    detection_prob: Option<f64>,
    #[arg(long)]
    signal_fraction: Option<f64>,
    #[arg(long)]
    stop_delay: Option<f64>,
    #[arg(long)]
    irf_fwhm: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Sketch file (default: <out>/sketches.skzf).
    #[arg(long)]
    sketches: Option<PathBuf>,
    /// Raw timestamp file for the floating-point and center-of-mass references.
    #[arg(long)]
    timestamps: Option<PathBuf>,
    /// Reference depth map to score against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// auto, linear, fourier or grid.
    #[arg(long)]
    solver: Option<String>,
    /// auto, none or a fraction in [0, 1].
    #[arg(long)]
    background: Option<String>,
    /// auto or an offset in bins.
    #[arg(long)]
    lut_offset: Option<String>,
    #[arg(long)]
    cmm_window: Option<u32>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// lut_depth, stop_delay, fxp_frac_bits or detection_prob.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated values (default depends on the axis).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Option<Vec<f64>>,
}

fn num_or(s: &str) -> NumOr {
    s.parse().map(NumOr::Num).unwrap_or_else(|_| NumOr::Word(s.to_owned()))
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    let c = &cli.common;
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(cli.seed => cfg.seed);
    set!(cli.out => cfg.out);
    set!(c.mode => cfg.mode);
    set!(c.lut_depth => cfg.lut_depth);
    set!(c.total_bits => cfg.total_bits);
    set!(c.frac_bits => cfg.frac_bits);
    set!(c.fmax => cfg.fmax);
    set!(c.rows => cfg.rows);
    set!(c.cols => cfg.cols);
    match &cli.command {
        Command::Genlut => {}
        Command::Acquire(a) => {
            set!(a.scene => cfg.scene.kind);
            set!(a.tof_bins => cfg.scene.tof_bins);
            set!(a.detection_prob => cfg.scene.detection_prob);
            set!(a.signal_fraction => cfg.scene.signal_fraction);
            set!(a.stop_delay => cfg.scene.stop_delay_bins);
            set!(a.irf_fwhm => cfg.irf.fwhm_bins);
        }
        Command::Reconstruct(a) => {
            set!(a.solver => cfg.reconstruct.solver);
            set!(a.cmm_window => cfg.reconstruct.cmm_window);
            if let Some(b) = &a.background {
                cfg.reconstruct.background = num_or(b);
            }
            if let Some(o) = &a.lut_offset {
                cfg.reconstruct.lut_offset = num_or(o);
            }
        }
        Command::Sweep(a) => {
            if a.axis.is_some() {
                cfg.sweep.axis = a.axis.clone();
            }
            if a.values.is_some() {
                cfg.sweep.values = a.values.clone();
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    apply_overrides(&cli, &mut cfg);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Genlut => commands::genlut(&cfg),
        Command::Acquire(_) => commands::acquire(&cfg),
        Command::Reconstruct(a) => commands::reconstruct(&cfg, a),
        Command::Sweep(_) => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spadsketch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
