//! The scenario pipeline. Every command reads and writes named artifacts in
//! the work directory and leaves a manifest of their hashes.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cst_core::basis::{build_basis, project_l2, CoefficientImage, GaussianBasis};
use cst_core::field::Field;
use cst_core::forward::{apply_l1, apply_p_operator, assemble_matrix, p_operator_matrix, AttenuationModel, Discretization, ForwardMatrix, ForwardSetup, Spectrum};
use cst_core::geometry::{build_geometry, EnergyGrid, ScanGeometry};
use cst_core::matrix::{norm, DenseMatrix};
use cst_core::metrics::{compute_metrics, MetricReport};
use cst_core::montecarlo::{calibrate_scale, simulate, McConfig};
use cst_core::phantom::{build_prior, build_shepp_logan, Phantom, Raster, WATER_ELECTRON_DENSITY};
use cst_core::solvers::{landweber, landweber_step, resesop_kaczmarz, resesop_tv, subproblems, tv_reconstruct, ResesopParams, TvSchedule};
use cst_core::uncertainty::{add_poisson_noise, estimate_eta_with_margin, UncertaintyMap};

use crate::config::{EtaReference, Method, Rho, RunConfig, Scenario};
use crate::cstb::{self, CstbArray, CstbWriter};
use crate::manifest::{sha256_file, verify_upstream, Manifest};

pub const METRICS_HEADER: &str = "scenario,method,snr,psnr,ssim,nmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Exact,
    Prior,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Exact => "exact",
            Which::Prior => "prior",
        }
    }

    fn raster(self) -> &'static str {
        match self {
            Which::Exact => "gt_raster.cstb",
            Which::Prior => "prior_raster.cstb",
        }
    }

    pub fn matrix_file(self) -> String {
        format!("matrix_{}.cstb", self.name())
    }
}

impl std::str::FromStr for Which {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Which::Exact),
            "prior" => Ok(Which::Prior),
            _ => bail!("unknown attenuation map {s:?} (exact, prior)"),
        }
    }
}

pub fn data_file(s: Scenario) -> String {
    format!("data_{}.cstb", s.name())
}

pub fn uncertainty_file(s: Scenario) -> String {
    format!("uncertainty_{}.cstb", s.name())
}

pub fn recon_stem(s: Scenario, m: Method) -> String {
    format!("recon_{}_{}", s.name(), m.name())
}

/// Scanner and grids derived from a configuration.
struct Scanner {
    geometry: ScanGeometry,
    grid: EnergyGrid,
    disc: Discretization,
    basis: GaussianBasis,
}

impl Scanner {
    fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Scanner {
            geometry: build_geometry(cfg.radius, cfg.n_s, cfg.n_d, cfg.arc_fraction)?,
            grid: EnergyGrid::standard(cfg.e0, cfg.energies)?,
            disc: Discretization::new(cfg.grid, cfg.extent, cfg.oversample)?,
            basis: build_basis(cfg.grid, cfg.extent)?,
        })
    }

    fn setup(&self) -> ForwardSetup<'_> {
        ForwardSetup::new(&self.geometry, &self.grid, self.disc)
    }
}

/// Collects the inputs and outputs of one command run.
struct Run<'a> {
    cfg: &'a RunConfig,
    manifest: Manifest,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, command: &str) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.workdir).with_context(|| format!("creating {}", cfg.workdir.display()))?;
        let mut manifest = Manifest::new(command);
        manifest.param("seed", cfg.seed);
        manifest.param("config_sha256", crate::manifest::sha256_bytes(cfg.to_text().as_bytes()));
        Ok(Run { cfg, manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.workdir.join(name)
    }

    fn input(&mut self, name: &str) -> Result<CstbArray> {
        let hash = verify_upstream(&self.cfg.workdir, name)?;
        self.manifest.inputs.insert(name.into(), hash);
        cstb::read(&self.path(name))
    }

    fn output(&mut self, name: &str, dims: &[usize], values: &[f64]) -> Result<()> {
        cstb::write(&self.path(name), dims, values)?;
        self.record(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let hash = sha256_file(&self.path(name))?;
        self.manifest.outputs.insert(name.into(), hash);
        Ok(())
    }

    fn finish(self, manifest_name: &str) -> Result<()> {
        self.manifest.write(&self.path(&format!("{manifest_name}.manifest")))
    }
}

fn raster_phantom(cfg: &RunConfig, a: &CstbArray) -> Result<Phantom> {
    let (rows, cols) = a.shape2()?;
    ensure!(rows == cols && rows == 2 * cfg.grid, "raster of {rows}x{cols} does not match grid = {}", cfg.grid);
    let step = cfg.extent / rows as f64;
    Ok(Phantom {
        ellipses: Vec::new(),
        raster: Raster { n: rows, origin: -0.5 * cfg.extent, step, values: a.values.clone() },
        extent: cfg.extent,
        water_density: WATER_ELECTRON_DENSITY,
    })
}

fn spectrum(cfg: &RunConfig, a: CstbArray, name: &str) -> Result<Spectrum> {
    let (p, k) = a.shape2().with_context(|| name.to_string())?;
    ensure!(k == cfg.n_s * cfg.n_d, "{name} has {k} tuples, the scanner has {}", cfg.n_s * cfg.n_d);
    Ok(Spectrum::new(p, k, a.values)?)
}

fn forward_matrix(cfg: &RunConfig, a: CstbArray, which: Which) -> Result<ForwardMatrix> {
    let (rows, cols) = a.shape2()?;
    let k = cfg.n_s * cfg.n_d;
    ensure!(rows == cfg.energies * k && cols == cfg.grid * cfg.grid, "matrix of {rows}x{cols} does not match the configuration");
    Ok(ForwardMatrix { matrix: DenseMatrix::new(rows, cols, a.values)?, p: cfg.energies, k, attenuation: which.name().into() })
}

fn coefficients(cfg: &RunConfig, a: &CstbArray) -> Result<Vec<f64>> {
    ensure!(a.dims == [cfg.grid, cfg.grid], "coefficient image of dims {:?} does not match grid = {}", a.dims, cfg.grid);
    Ok(a.values.clone())
}

/// Ground truth and prior rasters on the fine grid, the ground truth at the
/// basis nodes, and its L2 projection onto the basis.
pub fn cmd_phantom(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(cfg, "phantom")?;
    let fine = 2 * cfg.grid;
    let truth = build_shepp_logan(cfg.contrast, cfg.extent, fine)?;
    let prior = build_prior(&truth, cfg.prior_interior)?;
    let basis = build_basis(cfg.grid, cfg.extent)?;
    let nodes: Vec<f64> = (0..basis.dim()).map(|i| truth.value(basis.node_of_index(i))).collect();
    let projected = project_l2(&truth, &basis)?;
    run.output("gt_raster.cstb", &[fine, fine], &truth.raster.values)?;
    run.output("prior_raster.cstb", &[fine, fine], &prior.raster.values)?;
    run.output("gt_nodes.cstb", &[cfg.grid, cfg.grid], &nodes)?;
    run.output("gt_coefficients.cstb", &[cfg.grid, cfg.grid], &projected.coefficients)?;
    run.manifest.param("contrast", cfg.contrast).param("prior_interior", cfg.prior_interior);
    run.finish("phantom")
}

/// Forward matrix for the exact or the prior attenuation map, streamed to disk.
pub fn cmd_assemble(cfg: &RunConfig, which: Which) -> Result<()> {
    let mut run = Run::new(cfg, "assemble")?;
    let raster = run.input(which.raster())?;
    let phantom = raster_phantom(cfg, &raster)?;
    let scanner = Scanner::new(cfg)?;
    let mu = AttenuationModel::new(&phantom, WATER_ELECTRON_DENSITY, &scanner.disc);
    let fm = assemble_matrix(&mu, &scanner.basis, scanner.setup(), which.name())?;
    let name = which.matrix_file();
    let m = &fm.matrix;
    let mut w = CstbWriter::create(&run.path(&name), &[m.rows, m.cols])?;
    for r in 0..m.rows {
        w.write(m.row(r))?;
    }
    w.finish()?;
    run.record(&name)?;
    run.manifest.param("attenuation", which.name()).param("oversample", cfg.oversample);
    run.finish(&format!("assemble_{}", which.name()))
}

/// Deterministic first-order spectrum and calibrated Monte-Carlo tallies.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(cfg, "simulate")?;
    let raster = run.input("gt_raster.cstb")?;
    let phantom = raster_phantom(cfg, &raster)?;
    let scanner = Scanner::new(cfg)?;
    let mu = AttenuationModel::new(&phantom, WATER_ELECTRON_DENSITY, &scanner.disc);
    let g1 = apply_l1(&mu, &phantom, scanner.setup());
    let mc = McConfig::for_phantom(&phantom, &scanner.geometry, cfg.e0, cfg.i0, cfg.seed);
    let tally = simulate(&phantom, &scanner.geometry, &scanner.grid, &mc)?;
    let silent = |s: &Spectrum| s.values.iter().all(|&v| v == 0.0);
    // without a deterministic reference there is no intensity to match
    let scale = if silent(&g1) || silent(&tally.g1) { 0.0 } else { calibrate_scale(&tally.g1, &g1)? };
    let dims = [g1.p, g1.k];
    run.output("g1_exact.cstb", &dims, &g1.values)?;
    run.output("g1_mc.cstb", &dims, &tally.g1.scaled(scale).values)?;
    run.output("g2_mc.cstb", &dims, &tally.g2.scaled(scale).values)?;
    run.manifest
        .param("i0", cfg.i0)
        .param("mc_scale", scale)
        .param("majorant", mc.majorant)
        .param("emitted", tally.emitted.iter().sum::<u64>());
    log::info!("g2/g1 l1 ratio {:.4}", tally.g2.norm_l1() / tally.g1.norm_l1().max(f64::MIN_POSITIVE));
    run.finish("simulate")
}

/// Poisson-perturbed first-order data and the realized deviations.
pub fn cmd_noise(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::new(cfg, "noise")?;
    let g1 = spectrum(cfg, run.input("g1_exact.cstb")?, "g1_exact.cstb")?;
    let (noisy, delta) = add_poisson_noise(&g1, cfg.noise_level, cfg.seed)?;
    let dims = [g1.p, g1.k];
    run.output("g1_noisy.cstb", &dims, &noisy.values)?;
    run.output("noise_delta.cstb", &dims, &delta)?;
    run.manifest.param("noise_level", cfg.noise_level).param("realized_level", noisy.sub(&g1)?.norm() / g1.norm());
    run.finish("noise")
}

/// Data and per-subproblem bounds of one scenario. The model error is taken
/// at the projected ground truth, so it is an oracle estimate.
pub fn cmd_uncertainty(cfg: &RunConfig) -> Result<UncertaintyMap> {
    let s = cfg.scenario;
    let mut run = Run::new(cfg, "uncertainty")?;
    let fm = forward_matrix(cfg, run.input(&Which::Prior.matrix_file())?, Which::Prior)?;
    let truth = coefficients(cfg, &run.input("gt_coefficients.cstb")?)?;
    let g1 = spectrum(cfg, run.input("g1_exact.cstb")?, "g1_exact.cstb")?;
    let rho = match cfg.rho {
        Rho::Auto => 1.1 * norm(&truth),
        Rho::Value(r) => r,
    };
    let mut applied = fm.apply(&truth);
    let zeros = |sp: &Spectrum| vec![0.0; sp.values.len()];
    let (exact, data, delta) = match s {
        Scenario::I => {
            let d = zeros(&g1);
            (g1.clone(), g1, d)
        }
        Scenario::Ii => {
            let noisy = spectrum(cfg, run.input("g1_noisy.cstb")?, "g1_noisy.cstb")?;
            let delta = spectrum(cfg, run.input("noise_delta.cstb")?, "noise_delta.cstb")?;
            (g1, noisy, delta.values)
        }
        Scenario::Iii | Scenario::Iv => {
            let g2 = spectrum(cfg, run.input("g2_mc.cstb")?, "g2_mc.cstb")?;
            let mut total = g1.add(&g2)?;
            let mut reference = match cfg.eta_reference {
                EtaReference::Data => total.clone(),
                EtaReference::FirstOrder => g1,
            };
            if s == Scenario::Iv {
                total = apply_p_operator(&total)?;
                reference = apply_p_operator(&reference)?;
                applied = apply_p_operator(&applied)?;
            }
            let d = zeros(&total);
            (reference, total, d)
        }
    };
    let eta = estimate_eta_with_margin(&exact, &applied, rho, cfg.eta_margin)?;
    let map = UncertaintyMap::new(exact.p, exact.k, eta, delta, cfg.tau, rho)?;
    let mut packed = map.eta.clone();
    packed.extend_from_slice(&map.delta);
    run.output(&uncertainty_file(s), &[2, map.p, map.k], &packed)?;
    run.output(&data_file(s), &[data.p, data.k], &data.values)?;
    run.manifest
        .param("scenario", s.name())
        .param("tau", cfg.tau)
        .param("rho", rho)
        .param("model_error", exact.sub(&applied)?.norm() / exact.norm())
        .param("data_error", data.sub(&applied)?.norm() / data.norm())
        .param("mean_eta", map.eta.iter().sum::<f64>() / map.eta.len() as f64);
    run.finish(&format!("uncertainty_{}", s.name()))?;
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub coefficients: Vec<f64>,
    pub image: Vec<f64>,
    pub metrics: MetricReport,
    pub sweeps: usize,
}

/// Runs the configured method on the configured scenario.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<Reconstruction> {
    let (s, method) = (cfg.scenario, cfg.method);
    let mut run = Run::new(cfg, "reconstruct")?;
    let mut fm = forward_matrix(cfg, run.input(&Which::Prior.matrix_file())?, Which::Prior)?;
    let data = spectrum(cfg, run.input(&data_file(s))?, &data_file(s))?;
    let unc = run.input(&uncertainty_file(s))?;
    let gt = run.input("gt_nodes.cstb")?;
    let unc_manifest = Manifest::read(&run.path(&format!("uncertainty_{}.manifest", s.name())))?;
    let rho: f64 = unc_manifest.params.get("rho").context("uncertainty manifest lacks rho")?.parse()?;
    if s == Scenario::Iv {
        fm = p_operator_matrix(&fm)?;
    }
    ensure!(data.p == fm.p && data.k == fm.k, "data of {}x{} for an operator with {}x{} rows", data.p, data.k, fm.p, fm.k);
    ensure!(unc.dims == [2, fm.p, fm.k], "uncertainty map of dims {:?}, expected [2, {}, {}]", unc.dims, fm.p, fm.k);
    ensure!(gt.dims == [cfg.grid, cfg.grid], "ground truth of dims {:?}", gt.dims);
    let rows = fm.matrix.rows;
    let (eta, delta) = unc.values.split_at(rows);
    let n = cfg.grid;
    let start = vec![0.0; fm.matrix.cols];
    let (solution, trace, sweeps) = match method {
        Method::Resesop | Method::ResesopTv => {
            let subs = subproblems(&fm.matrix, &data.values, eta, delta)?;
            let params = ResesopParams::new(cfg.tau, rho, cfg.max_sweeps, start);
            let (f, trace) = if method == Method::Resesop {
                resesop_kaczmarz(&subs, &params)?
            } else {
                let schedule = TvSchedule {
                    every: cfg.tv_every,
                    steps: cfg.tv_steps,
                    lambda: cfg.lambda_denoise,
                    beta: cfg.beta_tv,
                    step_size: cfg.tv_step_size,
                    n,
                };
                resesop_tv(&subs, &params, &schedule)?
            };
            let sweeps = trace.sweeps();
            (f, trace.to_text(), sweeps)
        }
        Method::Landweber => {
            let step = landweber_step(&fm.matrix, cfg.landweber_step);
            let out = landweber(&fm.matrix, &data.values, step, cfg.landweber_steps, &start, None)?;
            let text = numbered("iteration residual", &out.residuals);
            (out.solution, text, out.iterations)
        }
        Method::Tv => {
            // operator and data scaled to a unit-norm operator, so lambda_tv
            // does not depend on the intensity units of the spectra
            let a = fm.matrix.spectral_norm(500);
            let m = &fm.matrix;
            let scaled = DenseMatrix::new(m.rows, m.cols, m.data.iter().map(|v| v / a).collect())?;
            let g: Vec<f64> = data.values.iter().map(|v| v / a).collect();
            let out = tv_reconstruct(Some(&scaled), &g, &start, n, cfg.lambda_tv, cfg.beta_tv, cfg.tv_iterations, 0.5)?;
            let text = numbered("step objective", &out.objective);
            (out.image, text, cfg.tv_iterations)
        }
    };
    let scanner_basis = build_basis(n, cfg.extent)?;
    let image = CoefficientImage::new(&scanner_basis, solution.clone())?.node_image();
    let metrics = compute_metrics(&image, &gt.values, n, n)?;
    let stem = recon_stem(s, method);
    run.output(&format!("{stem}_coefficients.cstb"), &[n, n], &solution)?;
    run.output(&format!("{stem}.cstb"), &[n, n], &image)?;
    std::fs::write(run.path(&format!("trace_{}_{}.txt", s.name(), method.name())), trace)?;
    append_metrics_row(&run.path("metrics.csv"), s.name(), method.name(), &metrics)?;
    run.manifest.param("scenario", s.name()).param("method", method.name()).param("rho", rho).param("sweeps", sweeps);
    run.finish(&stem)?;
    Ok(Reconstruction { coefficients: solution, image, metrics, sweeps })
}

fn numbered(header: &str, values: &[f64]) -> String {
    let mut out = format!("# {header}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i} {v:e}\n"));
    }
    out
}

/// Metrics of any `grid x grid` image against the ground truth.
pub fn cmd_metrics(cfg: &RunConfig, image: &Path) -> Result<MetricReport> {
    let mut run = Run::new(cfg, "metrics")?;
    let gt = run.input("gt_nodes.cstb")?;
    let rec = cstb::read(image)?;
    ensure!(rec.dims == gt.dims, "image of dims {:?} against ground truth {:?}", rec.dims, gt.dims);
    let (rows, cols) = gt.shape2()?;
    let m = compute_metrics(&rec.values, &gt.values, rows, cols)?;
    append_metrics_row(&run.path("metrics.csv"), cfg.scenario.name(), cfg.method.name(), &m)?;
    Ok(m)
}

pub fn append_metrics_row(path: &Path, scenario: &str, method: &str, m: &MetricReport) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(f, "{}", metrics_row(scenario, method, m))?;
    Ok(())
}

pub fn metrics_row(scenario: &str, method: &str, m: &MetricReport) -> String {
    format!("{scenario},{method},{},{},{},{}", m.snr, m.psnr, m.ssim, m.nmse)
}

/// 8-bit grayscale quantization with linear windowing over `window`
/// (defaults to the image range). Row 0 of the array is the bottom row.
pub fn quantize(a: &CstbArray, window: Option<(f64, f64)>) -> Result<image::GrayImage> {
    let (rows, cols) = a.shape2()?;
    let (lo, hi) = window.unwrap_or_else(|| {
        let lo = a.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let mut img = image::GrayImage::new(u32::try_from(cols)?, u32::try_from(rows)?);
    for (idx, &v) in a.values.iter().enumerate() {
        let level = if hi > lo { (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8 } else { 128 };
        let (r, c) = (idx / cols, idx % cols);
        img.put_pixel(c as u32, (rows - 1 - r) as u32, image::Luma([level]));
    }
    Ok(img)
}

pub fn cmd_export_png(input: &Path, output: &Path, window_from: Option<&Path>) -> Result<()> {
    let a = cstb::read(input)?;
    let window = match window_from {
        Some(p) => {
            let g = cstb::read(p)?;
            let lo = g.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = g.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((lo, hi))
        }
        None => None,
    };
    quantize(&a, window)?.save(output).with_context(|| format!("writing {}", output.display()))
}
