//! Flat `key = value` run configuration with the full-scale and desk presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Exact first-order data.
    I,
    /// First-order data with Poisson noise.
    Ii,
    /// First- plus second-order data.
    Iii,
    /// As `Iii` after energy differencing of data and operator.
    Iv,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::I, Scenario::Ii, Scenario::Iii, Scenario::Iv];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::I => "i",
            Scenario::Ii => "ii",
            Scenario::Iii => "iii",
            Scenario::Iv => "iv",
        }
    }
}

impl FromStr for Scenario {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|v| v.name() == s).with_context(|| format!("unknown scenario {s:?} (i, ii, iii, iv)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Landweber,
    Tv,
    Resesop,
    ResesopTv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Landweber, Method::Tv, Method::Resesop, Method::ResesopTv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Landweber => "landweber",
            Method::Tv => "tv",
            Method::Resesop => "resesop",
            Method::ResesopTv => "resesop_tv",
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .with_context(|| format!("unknown method {s:?} (landweber, tv, resesop, resesop_tv)"))
    }
}

/// What the model error behind eta is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaReference {
    /// The scenario's full exact data, second order included.
    Data,
    /// First-order data only; second-order scattering stays unmodelled.
    FirstOrder,
}

impl FromStr for EtaReference {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(EtaReference::Data),
            "first_order" => Ok(EtaReference::FirstOrder),
            _ => bail!("unknown eta_reference {s:?} (data, first_order)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    /// 1.1 times the norm of the projected ground truth.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: usize,
    pub extent: f64,
    pub radius: f64,
    pub n_s: usize,
    pub n_d: usize,
    pub arc_fraction: f64,
    pub energies: usize,
    pub e0: f64,
    pub i0: u64,
    pub contrast: f64,
    pub prior_interior: f64,
    pub oversample: usize,
    pub tau: f64,
    pub rho: Rho,
    pub eta_margin: f64,
    pub eta_reference: EtaReference,
    pub noise_level: f64,
    pub lambda_tv: f64,
    pub lambda_denoise: f64,
    pub beta_tv: f64,
    pub tv_every: usize,
    pub tv_steps: usize,
    pub tv_step_size: f64,
    pub tv_iterations: usize,
    pub max_sweeps: usize,
    pub landweber_steps: usize,
    /// Fraction of the largest admissible step `2 / |A|^2`.
    pub landweber_step: f64,
    pub seed: u64,
    pub scenario: Scenario,
    pub method: Method,
    pub workdir: PathBuf,
}

pub const KEYS: [&str; 31] = [
    "grid",
    "extent",
    "radius",
    "n_s",
    "n_d",
    "arc_fraction",
    "energies",
    "e0",
    "i0",
    "contrast",
    "prior_interior",
    "oversample",
    "tau",
    "rho",
    "eta_margin",
    "eta_reference",
    "noise_level",
    "lambda_tv",
    "lambda_denoise",
    "beta_tv",
    "tv_every",
    "tv_steps",
    "tv_step_size",
    "tv_iterations",
    "max_sweeps",
    "landweber_steps",
    "landweber_step",
    "seed",
    "scenario",
    "method",
    "workdir",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::full()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("{key} = {value:?}: {e}"))
}

impl RunConfig {
    /// The published scanner: 100x100 grid, 10 sources, 20 detectors, 80 energies.
    pub fn full() -> Self {
        RunConfig {
            grid: 100,
            extent: 30.0,
            radius: 30.0,
            n_s: 10,
            n_d: 20,
            arc_fraction: 0.8,
            energies: 80,
            e0: 1173.0,
            i0: 800_000_000,
            contrast: cst_core::phantom::DEFAULT_CONTRAST,
            prior_interior: 0.67,
            oversample: cst_core::forward::DEFAULT_OVERSAMPLE,
            tau: 1.01,
            rho: Rho::Auto,
            eta_margin: 0.0,
            eta_reference: EtaReference::FirstOrder,
            noise_level: 0.024,
            lambda_tv: 1e-4,
            lambda_denoise: 1.0,
            beta_tv: 1e-4,
            tv_every: 100,
            tv_steps: 10,
            tv_step_size: 0.1,
            tv_iterations: 200,
            max_sweeps: 2000,
            landweber_steps: 200,
            landweber_step: 0.9,
            seed: 1,
            scenario: Scenario::I,
            method: Method::Resesop,
            workdir: PathBuf::from("."),
        }
    }

    /// Smaller scanner that runs in minutes on a desktop.
    pub fn desk() -> Self {
        RunConfig { grid: 64, n_d: 10, energies: 40, i0: 10_000_000, ..RunConfig::full() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(RunConfig::full()),
            "desk" => Ok(RunConfig::desk()),
            _ => bail!("unknown preset {name:?} (full, desk)"),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "grid" => self.grid = parse(key, v)?,
            "extent" => self.extent = parse(key, v)?,
            "radius" => self.radius = parse(key, v)?,
            "n_s" => self.n_s = parse(key, v)?,
            "n_d" => self.n_d = parse(key, v)?,
            "arc_fraction" => self.arc_fraction = parse(key, v)?,
            "energies" => self.energies = parse(key, v)?,
            "e0" => self.e0 = parse(key, v)?,
            // accepts 8e8 style counts
            "i0" => {
                let x: f64 = parse(key, v)?;
                ensure!(x >= 1.0 && x.fract() == 0.0 && x < u64::MAX as f64, "i0 = {v:?} is not a photon count");
                self.i0 = x as u64;
            }
            "contrast" => self.contrast = parse(key, v)?,
            "prior_interior" => self.prior_interior = parse(key, v)?,
            "oversample" => self.oversample = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "rho" => self.rho = if v == "auto" { Rho::Auto } else { Rho::Value(parse(key, v)?) },
            "eta_margin" => self.eta_margin = parse(key, v)?,
            "eta_reference" => self.eta_reference = v.parse()?,
            "noise_level" => self.noise_level = parse(key, v)?,
            "lambda_tv" => self.lambda_tv = parse(key, v)?,
            "lambda_denoise" => self.lambda_denoise = parse(key, v)?,
            "beta_tv" => self.beta_tv = parse(key, v)?,
            "tv_every" => self.tv_every = parse(key, v)?,
            "tv_steps" => self.tv_steps = parse(key, v)?,
            "tv_step_size" => self.tv_step_size = parse(key, v)?,
            "tv_iterations" => self.tv_iterations = parse(key, v)?,
            "max_sweeps" => self.max_sweeps = parse(key, v)?,
            "landweber_steps" => self.landweber_steps = parse(key, v)?,
            "landweber_step" => self.landweber_step = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "scenario" => self.scenario = v.parse()?,
            "method" => self.method = v.parse()?,
            "workdir" => self.workdir = PathBuf::from(v),
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("line {}: expected key = value", no + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text)
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "grid" => self.grid.to_string(),
            "extent" => self.extent.to_string(),
            "radius" => self.radius.to_string(),
            "n_s" => self.n_s.to_string(),
            "n_d" => self.n_d.to_string(),
            "arc_fraction" => self.arc_fraction.to_string(),
            "energies" => self.energies.to_string(),
            "e0" => self.e0.to_string(),
            "i0" => self.i0.to_string(),
            "contrast" => self.contrast.to_string(),
            "prior_interior" => self.prior_interior.to_string(),
            "oversample" => self.oversample.to_string(),
            "tau" => self.tau.to_string(),
            "rho" => match self.rho {
                Rho::Auto => "auto".into(),
                Rho::Value(r) => r.to_string(),
            },
            "eta_margin" => self.eta_margin.to_string(),
            "eta_reference" => match self.eta_reference {
                EtaReference::Data => "data".into(),
                EtaReference::FirstOrder => "first_order".into(),
            },
            "noise_level" => self.noise_level.to_string(),
            "lambda_tv" => self.lambda_tv.to_string(),
            "lambda_denoise" => self.lambda_denoise.to_string(),
            "beta_tv" => self.beta_tv.to_string(),
            "tv_every" => self.tv_every.to_string(),
            "tv_steps" => self.tv_steps.to_string(),
            "tv_step_size" => self.tv_step_size.to_string(),
            "tv_iterations" => self.tv_iterations.to_string(),
            "max_sweeps" => self.max_sweeps.to_string(),
            "landweber_steps" => self.landweber_steps.to_string(),
            "landweber_step" => self.landweber_step.to_string(),
            "seed" => self.seed.to_string(),
            "scenario" => self.scenario.name().into(),
            "method" => self.method.name().into(),
            "workdir" => self.workdir.display().to_string(),
            _ => unreachable!("key list and accessors disagree"),
        }
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, count) in [
            ("grid", self.grid),
            ("n_s", self.n_s),
            ("n_d", self.n_d),
            ("energies", self.energies),
            ("oversample", self.oversample),
            ("tv_every", self.tv_every),
            ("max_sweeps", self.max_sweeps),
            ("landweber_steps", self.landweber_steps),
        ] {
            ensure!(count >= 1, "{name} must be at least 1");
        }
        ensure!(self.grid >= 2, "grid must be at least 2");
        ensure!(self.extent > 0.0 && self.radius > 0.0, "extent and radius must be positive");
        ensure!(self.extent / std::f64::consts::SQRT_2 < self.radius, "the imaging square must lie inside the scanner circle");
        ensure!(self.arc_fraction > 0.0 && self.arc_fraction <= 1.0, "arc_fraction must lie in (0, 1]");
        ensure!(self.e0 > 0.0, "e0 must be positive");
        ensure!(self.tau > 1.0, "tau must exceed 1");
        if let Rho::Value(r) = self.rho {
            ensure!(r > 0.0, "rho must be positive");
        }
        ensure!(self.eta_margin >= 0.0 && self.noise_level > 0.0, "eta_margin must be nonnegative and noise_level positive");
        ensure!(self.lambda_tv >= 0.0 && self.lambda_denoise >= 0.0 && self.beta_tv > 0.0, "TV weights must be nonnegative, beta positive");
        ensure!(self.tv_step_size > 0.0, "tv_step_size must be positive");
        ensure!(self.landweber_step > 0.0 && self.landweber_step < 1.0, "landweber_step is a fraction in (0, 1)");
        Ok(())
    }
}
