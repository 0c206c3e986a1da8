//! Command-line front end: loads a [`config::RunConfig`], runs pipeline
//! stages against an output directory, and fingerprints every artifact.

pub mod artifact;
pub mod config;
pub mod error;
pub mod presets;
pub mod stages;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::artifact::Workspace;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::presets::Preset;
use crate::stages::Stage;

#[derive(Debug, Parser)]
#[command(name = "pvsearch", version, about = "Rotating-source spin-velocity force search pipeline")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also render SVG line plots.
    #[arg(long, global = true)]
    pub svg: bool,
    /// Suppress progress lines on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Run a comparison preset instead of a subcommand.
    #[arg(long, value_enum)]
    pub reproduce: Option<Preset>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward field per unit coupling, with spectrum sidecar.
    Simulate,
    /// Sensor response curves and the per-coupling output waveform.
    Respond,
    /// Seeded synthetic sensor record.
    Synth,
    /// Block-wise demodulation of the synthetic record.
    Analyze,
    /// Systematic error budget.
    Budget,
    /// Confidence limit and exclusion curve.
    Limits,
    /// All stages in order.
    Pipeline,
    /// Comparison preset.
    Reproduce {
        #[arg(value_enum)]
        preset: Preset,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    if matches!(cli.command, Some(Command::DefaultConfig)) {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let cfg = resolve_config(cli)?;
    let ws = Workspace::create(&cfg.output_dir, cfg.fingerprint(), cli.svg)?;
    let stage = Stage { cfg: &cfg, ws: &ws, quiet: cli.quiet };
    if let Some(preset) = cli.reproduce {
        if cli.command.is_some() {
            return Err(error::CliError::Config("--reproduce cannot be combined with a subcommand".into()));
        }
        return stage.reproduce(preset);
    }
    match &cli.command {
        None => Err(error::CliError::Config("no subcommand given; see --help".into())),
        Some(Command::Pipeline) => stage.pipeline(),
        Some(Command::Simulate) => stage.simulate(),
        Some(Command::Respond) => stage.respond(),
        Some(Command::Synth) => stage.synth(),
        Some(Command::Analyze) => stage.analyze(),
        Some(Command::Budget) => stage.budget(),
        Some(Command::Limits) => stage.limits(),
        Some(Command::Reproduce { preset }) => stage.reproduce(*preset),
        Some(Command::DefaultConfig) => unreachable!("handled above"),
    }
}
