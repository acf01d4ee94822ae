use std::path::PathBuf;

use anyhow::Result;
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use cst_cli::config::{RunConfig, KEYS};
use cst_cli::pipeline::{self, Which};

/// `--<key> <value>` for every configuration key.
#[derive(Debug, Clone, Default)]
struct Overrides(Vec<(String, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut o = Overrides::default();
        o.update_from_arg_matches(m)?;
        Ok(o)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        for key in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.0.push((key.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(cmd: Command) -> Command {
        KEYS.iter().fold(cmd, |c, key| {
            c.arg(Arg::new(*key).long(*key).value_name("VALUE").help_heading("Configuration").help(format!("override `{key}`")))
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Starting preset: full or desk.
    #[arg(long, default_value = "full")]
    preset: String,
    /// `key = value` configuration file applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in &self.overrides.0 {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "cst", version, about = "Compton scattering tomography: simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Ground-truth and prior phantoms.
    Phantom(Common),
    /// Forward matrix for the exact or prior attenuation map.
    Assemble {
        #[arg(long, default_value = "prior")]
        which: Which,
        #[command(flatten)]
        common: Common,
    },
    /// Deterministic first-order and Monte-Carlo spectra.
    Simulate(Common),
    /// Poisson noise on the first-order spectrum.
    Noise(Common),
    /// Data and uncertainty levels of the configured scenario.
    Uncertainty(Common),
    /// Reconstruction with the configured method and scenario.
    Reconstruct(Common),
    /// Metrics of an image against the ground truth.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grayscale PNG of a 2D array.
    ExportPng {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Window the gray levels to the range of this array.
        #[arg(long)]
        window_from: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    ShowConfig(Common),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Phantom(c) => pipeline::cmd_phantom(&c.resolve()?)?,
        Cmd::Assemble { which, common } => pipeline::cmd_assemble(&common.resolve()?, which)?,
        Cmd::Simulate(c) => pipeline::cmd_simulate(&c.resolve()?)?,
        Cmd::Noise(c) => pipeline::cmd_noise(&c.resolve()?)?,
        Cmd::Uncertainty(c) => {
            let map = pipeline::cmd_uncertainty(&c.resolve()?)?;
            log::info!("rho {:.4}, {} subproblems", map.rho, map.eta.len());
        }
        Cmd::Reconstruct(c) => {
            let cfg = c.resolve()?;
            let r = pipeline::cmd_reconstruct(&cfg)?;
            println!("{}", pipeline::METRICS_HEADER);
            println!("{}", pipeline::metrics_row(cfg.scenario.name(), cfg.method.name(), &r.metrics));
        }
        Cmd::Metrics { image, common } => {
            let cfg = common.resolve()?;
            let m = pipeline::cmd_metrics(&cfg, &image)?;
            println!("{}", pipeline::METRICS_HEADER);
            println!("{}", pipeline::metrics_row(cfg.scenario.name(), cfg.method.name(), &m));
        }
        Cmd::ExportPng { input, output, window_from } => pipeline::cmd_export_png(&input, &output, window_from.as_deref())?,
        Cmd::ShowConfig(c) => print!("{}", c.resolve()?.to_text()),
    }
    Ok(())
}
