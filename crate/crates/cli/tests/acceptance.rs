//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 6 to 8 run the desk-scale pipeline end to end and
//! take several minutes.

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use cst_cli::config::{Method, RunConfig, Scenario};
use cst_cli::cstb;
use cst_cli::pipeline::{self, Which};
use cst_core::basis::{build_basis, CoefficientImage};
use cst_core::forward::{
    apply_l1, apply_nonlinear_l1, apply_p_operator, assemble_matrix, frechet_l1, AttenuationModel, Discretization, ForwardSetup, Spectrum,
};
use cst_core::geometry::{build_geometry, compton_energy, scatter_phase, EnergyGrid, Point};
use cst_core::matrix::{distance, dot, norm, DenseMatrix};
use cst_core::metrics::{compute_metrics, MetricReport};
use cst_core::phantom::{build_shepp_logan, DEFAULT_CONTRAST, WATER_ELECTRON_DENSITY};
use cst_core::solvers::{resesop_kaczmarz, resesop_observed, sesop, stripe_of, subproblems, ResesopParams, UpdateEvent};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn to_nalgebra(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows, a.cols, &a.data)
}

/// Minimum-norm solution through the SVD pseudo-inverse.
fn pinv_solve(a: &DenseMatrix, g: &[f64]) -> Vec<f64> {
    let p = to_nalgebra(a).pseudo_inverse(1e-12).unwrap();
    (p * nalgebra::DVector::from_column_slice(g)).iter().copied().collect()
}

/// Fifty random surjective systems shared by criteria 1 and 2.
fn systems() -> Vec<(DenseMatrix, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let rows = rng.gen_range(4..=12);
            let cols = rng.gen_range(rows.max(8)..=24);
            let a = random_matrix(&mut rng, rows, cols);
            let z: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (a, z)
        })
        .collect()
}

fn sesop_minimum_norm() -> Result<Verdict> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (a, z) in systems() {
        let g = a.matvec(&z);
        let zeros = vec![0.0; a.rows];
        let subs = subproblems(&a, &g, &zeros, &zeros)?;
        let (f, _) = sesop(&subs, &vec![0.0; a.cols], 200_000, 1e-15)?;
        let oracle = pinv_solve(&a, &g);
        worst = worst.max(distance(&f, &oracle) / norm(&oracle));
    }
    let elapsed = start.elapsed();
    verdict(worst <= 1e-8 && elapsed < Duration::from_secs(10), format!("max relative error {worst:.2e} (<= 1e-8), {elapsed:.2?} (< 10 s)"))
}

fn stripe_containment_and_descent() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut updates, mut violations) = (0usize, 0usize);
    for (a, z) in systems() {
        // perturbed operator with per-row uncertainty, noisy data within delta
        let mut inexact = a.clone();
        for v in inexact.data.iter_mut() {
            *v += 0.05 * rng.gen_range(-1.0..1.0);
        }
        let eta: Vec<f64> = (0..a.rows).map(|r| distance(inexact.row(r), a.row(r))).collect();
        let delta: Vec<f64> = (0..a.rows).map(|_| rng.gen_range(0.001..0.05)).collect();
        let data: Vec<f64> = a.matvec(&z).iter().zip(&delta).map(|(g, d)| g + d * rng.gen_range(-1.0..1.0)).collect();
        let rho = 1.05 * norm(&z);
        let subs = subproblems(&inexact, &data, &eta, &delta)?;
        let mut observe = |e: &UpdateEvent| {
            updates += 1;
            let stripe = stripe_of(e.subproblem, e.w, rho);
            let contained = (dot(&stripe.u, &z) - stripe.alpha).abs() <= stripe.xi * (1.0 + 1e-12) + 1e-14;
            let bound = rho * e.subproblem.eta + e.subproblem.delta;
            let gain = e.w.abs() * (e.w.abs() - bound) / norm(&stripe.u);
            let before = distance(&z, e.before).powi(2);
            let descent = distance(&z, e.after).powi(2) <= before - gain * gain + 1e-12 * before;
            if !(contained && descent) {
                violations += 1;
            }
        };
        resesop_observed(&subs, &ResesopParams::new(1.1, rho, 2000, vec![0.0; a.cols]), &mut observe)?;
    }
    verdict(violations == 0 && updates > 0, format!("{updates} updates checked, {violations} violations"))
}

fn regularization_trend() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut sequences = Vec::new();
    for _ in 0..10 {
        let a = random_matrix(&mut rng, 6, 10);
        let z: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = a.matvec(&z);
        let limit = pinv_solve(&a, &g);
        let mut e = random_matrix(&mut rng, 6, 10);
        let fro = e.frobenius();
        e.data.iter_mut().for_each(|v| *v /= fro);
        let direction: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rho = 1.5 * norm(&limit);
        let mut dists = Vec::new();
        for l in 0..=6 {
            let level = 0.1 / 2f64.powi(l);
            let inexact = DenseMatrix::new(6, 10, a.data.iter().zip(&e.data).map(|(x, y)| x + level * y).collect())?;
            let eta: Vec<f64> = (0..6).map(|r| level * norm(e.row(r))).collect();
            let delta = vec![level; 6];
            let data: Vec<f64> = g.iter().zip(&direction).map(|(v, d)| v + level * d).collect();
            let subs = subproblems(&inexact, &data, &eta, &delta)?;
            let (f, _) = resesop_kaczmarz(&subs, &ResesopParams::new(1.01, rho, 100_000, vec![0.0; 10]))?;
            dists.push(distance(&f, &limit));
        }
        worst_rise = dists.windows(2).map(|w| w[1] - w[0]).fold(worst_rise, f64::max);
        sequences.push(dists);
    }
    let first = sequences[0].iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(" ");
    verdict(worst_rise <= 1e-8, format!("largest increase {worst_rise:.2e} (slack 1e-8) over 10 systems; first: {first}"))
}

/// Orthonormal basis of block-constant vectors of the given block length.
fn block_basis(dim: usize, block: usize) -> DenseMatrix {
    let cols = dim / block;
    let mut m = DenseMatrix::zeros(dim, cols);
    let w = 1.0 / (block as f64).sqrt();
    for i in 0..dim {
        m.data[i * cols + i / block] = w;
    }
    m
}

fn nested_subspaces() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 12, 16);
    let z: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = a.matvec(&z);
    let min_norm = pinv_solve(&a, &g);
    let rho = 1.5 * norm(&min_norm);
    let mut dists = Vec::new();
    for (level, block) in [(0.1, 4), (0.01, 2), (0.0, 1)] {
        let basis = block_basis(16, block);
        let dim = basis.cols;
        // the restricted operator A P, computed as (P^T A^T)^T
        let mut restricted = DenseMatrix::zeros(12, dim);
        for r in 0..12 {
            for c in 0..dim {
                restricted.data[r * dim + c] = (0..16).map(|i| a.get(r, i) * basis.get(i, c)).sum();
            }
        }
        let mut inexact = restricted.clone();
        for v in inexact.data.iter_mut() {
            *v += level * rng.gen_range(-1.0..1.0);
        }
        // discretization error of the minimum-norm solution joins the model error
        let coarse: Vec<f64> = (0..dim).map(|c| (0..16).map(|i| basis.get(i, c) * min_norm[i]).sum()).collect();
        let fine_err: Vec<f64> = restricted.matvec(&coarse).iter().zip(&g).map(|(x, y)| y - x).collect();
        let eta: Vec<f64> = (0..12).map(|r| distance(inexact.row(r), restricted.row(r)) + fine_err[r].abs() / rho).collect();
        let delta = vec![level; 12];
        let data: Vec<f64> = g.iter().map(|v| v + level * rng.gen_range(-1.0..1.0)).collect();
        let subs = subproblems(&inexact, &data, &eta, &delta)?;
        let (c, _) = resesop_kaczmarz(&subs, &ResesopParams::new(1.01, rho, 200_000, vec![0.0; dim]))?;
        let f = basis.matvec(&c);
        dists.push(distance(&f, &min_norm));
    }
    let last = *dists.last().unwrap();
    let text = dists.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(" -> ");
    verdict(last <= 1e-6, format!("distance to minimum-norm solution for j = 4, 8, 16: {text} (final <= 1e-6)"))
}

fn forward_checks() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let geometry = build_geometry(30.0, 2, 3, 0.8)?;
    let grid = EnergyGrid::standard(1173.0, 12)?;
    let disc = Discretization::new(8, 30.0, 2)?;
    let basis = build_basis(8, 30.0)?;
    let setup = ForwardSetup::new(&geometry, &grid, disc);
    let phantom = build_shepp_logan(DEFAULT_CONTRAST, 30.0, 16)?;
    let mu = AttenuationModel::new(&phantom, WATER_ELECTRON_DENSITY, &disc);
    let m = assemble_matrix(&mu, &basis, setup, "exact")?.matrix;

    let mut adjoint = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..m.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m.rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = m.matvec(&x);
        adjoint = adjoint.max((dot(&ax, &y) - dot(&x, &m.matvec_t(&y))).abs() / (norm(&ax) * norm(&y)));
    }

    let mut frechet = 0.0f64;
    for _ in 0..10 {
        let f: Vec<f64> = (0..basis.dim()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let h: Vec<f64> = (0..basis.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fi = CoefficientImage::new(&basis, f.clone())?;
        let hi = CoefficientImage::new(&basis, h.clone())?;
        let deriv = frechet_l1(&fi, &hi, setup)?;
        let eps = 1e-4 * norm(&f) / norm(&h);
        let shift = |sign: f64| -> Result<Spectrum> {
            let c = f.iter().zip(&h).map(|(a, b)| a + sign * eps * b).collect();
            Ok(apply_nonlinear_l1(&CoefficientImage::new(&basis, c)?, setup)?)
        };
        let fd = shift(1.0)?.sub(&shift(-1.0)?)?.scaled(0.5 / eps);
        frechet = frechet.max(fd.sub(&deriv)?.norm() / deriv.norm());
    }

    let mut phase = 0.0f64;
    let mut triples = 0;
    while triples < 10_000 {
        let s = Point::from_polar(30.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let d = Point::from_polar(30.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let x = Point::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let (u, v) = (x - s, d - x);
        if s.dist(d) < 1.0 || u.norm() < 1e-3 || v.norm() < 1e-3 || u.cross(v).abs() < 1e-3 * u.norm() * v.norm() {
            continue;
        }
        let omega = u.cross(v).abs().atan2(u.dot(v));
        let expected = compton_energy(1173.0, omega)?;
        phase = phase.max((scatter_phase(x, d, s, 1173.0)? - expected).abs() / expected);
        triples += 1;
    }

    let desk = RunConfig::desk();
    let geometry = build_geometry(desk.radius, desk.n_s, desk.n_d, desk.arc_fraction)?;
    let grid = EnergyGrid::standard(desk.e0, desk.energies)?;
    let phantom = build_shepp_logan(DEFAULT_CONTRAST, desk.extent, 2 * desk.grid)?;
    let coarse = Discretization::new(desk.grid, desk.extent, desk.oversample)?;
    let g1 = |disc: Discretization| {
        let mu = AttenuationModel::new(&phantom, WATER_ELECTRON_DENSITY, &disc);
        apply_l1(&mu, &phantom, ForwardSetup::new(&geometry, &grid, disc))
    };
    let base = g1(coarse);
    let halving = base.sub(&g1(coarse.refined()))?.norm() / base.norm();

    let pass = adjoint <= 1e-10 && frechet <= 1e-4 && phase <= 1e-10 && halving <= 0.01;
    verdict(
        pass,
        format!("adjoint {adjoint:.1e} (<= 1e-10), Frechet {frechet:.1e} (<= 1e-4), phase {phase:.1e} (<= 1e-10), halving {halving:.2e} (<= 1e-2)"),
    )
}

struct DeskRuns {
    nmse: Vec<(Scenario, Method, f64)>,
    l1_ratio: f64,
    p_ratio: f64,
    second_order_time: Duration,
    first_order_time: Duration,
}

impl DeskRuns {
    fn get(&self, s: Scenario, m: Method) -> f64 {
        self.nmse.iter().find(|(a, b, _)| *a == s && *b == m).map(|t| t.2).unwrap_or(f64::NAN)
    }
}

fn desk_pipeline(dir: &Path) -> Result<DeskRuns> {
    let mut cfg = RunConfig::desk();
    cfg.workdir = dir.to_path_buf();
    let t = Instant::now();
    pipeline::cmd_phantom(&cfg)?;
    pipeline::cmd_assemble(&cfg, Which::Prior)?;
    let setup_time = t.elapsed();
    let mut nmse = Vec::new();
    let t_sim = Instant::now();
    pipeline::cmd_simulate(&cfg)?;
    let sim_time = t_sim.elapsed();
    // the simulation also produces g1, so it counts towards both budgets
    let mut first_order_time = setup_time + sim_time;
    pipeline::cmd_noise(&cfg)?;
    for s in Scenario::ALL {
        let mut c = cfg.clone();
        c.scenario = s;
        pipeline::cmd_uncertainty(&c)?;
    }
    let methods: &[(Scenario, &[Method])] = &[
        (Scenario::I, &[Method::Resesop, Method::ResesopTv, Method::Landweber]),
        (Scenario::Ii, &[Method::Resesop, Method::ResesopTv, Method::Landweber]),
        (Scenario::Iii, &[Method::Resesop]),
        (Scenario::Iv, &[Method::Resesop]),
    ];
    let mut second_order_time = sim_time;
    for (s, ms) in methods {
        for m in *ms {
            let mut c = cfg.clone();
            c.scenario = *s;
            c.method = *m;
            let t = Instant::now();
            let r = pipeline::cmd_reconstruct(&c)?;
            if *s == Scenario::I {
                first_order_time += t.elapsed();
            }
            if matches!(s, Scenario::Iii | Scenario::Iv) {
                second_order_time += t.elapsed();
            }
            nmse.push((*s, *m, r.metrics.nmse));
        }
    }
    let read = |name: &str| -> Result<Spectrum> {
        let a = cstb::read(&dir.join(name))?;
        let (p, k) = a.shape2()?;
        Ok(Spectrum::new(p, k, a.values)?)
    };
    let g1 = read("g1_exact.cstb")?;
    let g2 = read("g2_mc.cstb")?;
    let l1_ratio = g2.norm_l1() / g1.norm_l1();
    let p_ratio = apply_p_operator(&g2)?.norm_l1() / apply_p_operator(&g1)?.norm_l1();
    Ok(DeskRuns { nmse, l1_ratio, p_ratio, second_order_time, first_order_time })
}

fn scenario_one(d: &DeskRuns) -> Result<Verdict> {
    let (tv, re, lw) = (d.get(Scenario::I, Method::ResesopTv), d.get(Scenario::I, Method::Resesop), d.get(Scenario::I, Method::Landweber));
    verdict(
        tv < re && re < lw && d.first_order_time < Duration::from_secs(15 * 60),
        format!("NMSE resesop_tv {tv:.4} < resesop {re:.4} < landweber {lw:.4}; {:.0?} (< 15 min)", d.first_order_time),
    )
}

fn scenario_two(d: &DeskRuns) -> Result<Verdict> {
    let (tv, re, lw) = (d.get(Scenario::Ii, Method::ResesopTv), d.get(Scenario::Ii, Method::Resesop), d.get(Scenario::Ii, Method::Landweber));
    let r_re = re / d.get(Scenario::I, Method::Resesop);
    let r_tv = tv / d.get(Scenario::I, Method::ResesopTv);
    verdict(
        tv < re && re < lw && r_re <= 1.5 && r_tv <= 1.5,
        format!("NMSE resesop_tv {tv:.4} < resesop {re:.4} < landweber {lw:.4}; ratio to noise-free {r_re:.3}, {r_tv:.3} (<= 1.5)"),
    )
}

fn scenarios_with_second_order(d: &DeskRuns) -> Result<Verdict> {
    let (i, iii, iv) = (d.get(Scenario::I, Method::Resesop), d.get(Scenario::Iii, Method::Resesop), d.get(Scenario::Iv, Method::Resesop));
    verdict(
        iii > i && iv < iii && d.p_ratio < d.l1_ratio && d.second_order_time < Duration::from_secs(30 * 60),
        format!(
            "NMSE iii {iii:.4} > i {i:.4}, iv {iv:.4} < iii; l1 ratio differenced {:.3} < plain {:.3}; {:.0?} (< 30 min)",
            d.p_ratio, d.l1_ratio, d.second_order_time
        ),
    )
}

/// Direct evaluation of the four measures, written independently of the
/// library: full 11x11 window weights built per pixel, two-pass moments.
fn brute_metrics(rec: &[f64], gt: &[f64], n: usize) -> MetricReport {
    let len = (n * n) as f64;
    let mean = rec.iter().sum::<f64>() / len;
    let sd = (rec.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    let mse = rec.iter().zip(gt).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / len;
    let peak = gt.iter().cloned().fold(f64::MIN, f64::max);
    let floor = gt.iter().cloned().fold(f64::MAX, f64::min);
    let range = if peak > floor { peak - floor } else { 1.0 };
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    for y in 0..n as i64 {
        for x in 0..n as i64 {
            let mut cells = Vec::new();
            for v in 0..n as i64 {
                for u in 0..n as i64 {
                    let (dx, dy) = ((u - x) as f64, (v - y) as f64);
                    if (u - x).abs() <= 5 && (v - y).abs() <= 5 {
                        cells.push(((-(dx * dx + dy * dy) / 4.5).exp(), (v * n as i64 + u) as usize));
                    }
                }
            }
            let wsum: f64 = cells.iter().map(|c| c.0).sum();
            let mx: f64 = cells.iter().map(|&(w, i)| w * rec[i]).sum::<f64>() / wsum;
            let my: f64 = cells.iter().map(|&(w, i)| w * gt[i]).sum::<f64>() / wsum;
            let vx: f64 = cells.iter().map(|&(w, i)| w * (rec[i] - mx).powi(2)).sum::<f64>() / wsum;
            let vy: f64 = cells.iter().map(|&(w, i)| w * (gt[i] - my).powi(2)).sum::<f64>() / wsum;
            let cxy: f64 = cells.iter().map(|&(w, i)| w * (rec[i] - mx) * (gt[i] - my)).sum::<f64>() / wsum;
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    let gt_norm = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
    MetricReport {
        snr: mean / sd,
        psnr: 10.0 * (peak * peak / mse).log10(),
        ssim: total / len,
        nmse: (mse * len).sqrt() / gt_norm,
    }
}

fn metrics_oracle() -> Result<Verdict> {
    let gt = [1.0, 2.0, 3.0, 4.0, 2.0, 5.0, 1.0, 0.5, 3.0, 3.0, 2.0, 1.0, 0.0, 1.0, 4.0, 2.0];
    let recs: [[f64; 16]; 3] = [
        [1.2, 1.8, 3.1, 3.7, 2.2, 4.6, 1.3, 0.4, 2.9, 3.3, 1.8, 1.1, 0.2, 0.9, 4.2, 1.7],
        [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0],
        [2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 3.0, 0.5, 3.0, 0.5, 4.0, 4.0, 0.0, 0.0],
    ];
    let mut worst = 0.0f64;
    for rec in &recs {
        let lib = compute_metrics(rec, &gt, 4, 4)?;
        let oracle = brute_metrics(rec, &gt, 4);
        for (a, b) in [(lib.snr, oracle.snr), (lib.psnr, oracle.psnr), (lib.ssim, oracle.ssim), (lib.nmse, oracle.nmse)] {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let mut scale_law = true;
    for a in [0.0, 0.25, 0.5, 1.0, 2.0, 3.0] {
        let rec: Vec<f64> = gt.iter().map(|v| a * v).collect();
        scale_law &= compute_metrics(&rec, &gt, 4, 4)?.nmse == (a - 1.0f64).abs();
    }
    verdict(worst <= 1e-6 && scale_law, format!("max deviation from brute force {worst:.1e} (<= 1e-6); scale law exact: {scale_law}"))
}

fn tiny_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.grid = 12;
    c.n_s = 4;
    c.n_d = 4;
    c.energies = 10;
    c.i0 = 300_000;
    c.max_sweeps = 50;
    c.tv_every = 10;
    c.landweber_steps = 20;
    c.workdir = dir.to_path_buf();
    c
}

fn run_all_commands(cfg: &RunConfig) -> Result<()> {
    pipeline::cmd_phantom(cfg)?;
    pipeline::cmd_assemble(cfg, Which::Prior)?;
    pipeline::cmd_assemble(cfg, Which::Exact)?;
    pipeline::cmd_simulate(cfg)?;
    pipeline::cmd_noise(cfg)?;
    for s in Scenario::ALL {
        let mut c = cfg.clone();
        c.scenario = s;
        pipeline::cmd_uncertainty(&c)?;
        for m in Method::ALL {
            c.method = m;
            pipeline::cmd_reconstruct(&c)?;
        }
    }
    Ok(())
}

fn cstb_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("cstb") {
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path)?));
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Result<Verdict> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let pool = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build();
    pool(1)?.install(|| run_all_commands(&tiny_config(a.path())))?;
    pool(4)?.install(|| run_all_commands(&tiny_config(b.path())))?;
    let (fa, fb) = (cstb_files(a.path())?, cstb_files(b.path())?);
    ensure!(!fa.is_empty(), "no artifacts written");
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    verdict(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} CSTB files from 1 and 4 threads, {} differ {differing:?}", fa.len(), differing.len()),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, outcome: Result<Verdict>, took: Duration| {
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} {id:>2} {name}: {detail} [{took:.1?}]", if pass { "PASS" } else { "FAIL" });
    };
    let timed = |f: &dyn Fn() -> Result<Verdict>| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };

    let (v, t) = timed(&sesop_minimum_norm);
    report(1, "SESOP minimum-norm oracle", v, t);
    let (v, t) = timed(&stripe_containment_and_descent);
    report(2, "stripe containment and descent", v, t);
    let (v, t) = timed(&regularization_trend);
    report(3, "regularization trend", v, t);
    let (v, t) = timed(&nested_subspaces);
    report(4, "nested-subspace stability", v, t);
    let (v, t) = timed(&forward_checks);
    report(5, "forward-model checks", v, t);

    let t = Instant::now();
    let desk = tempfile::tempdir().map_err(anyhow::Error::from).and_then(|dir| desk_pipeline(dir.path()));
    let took = t.elapsed();
    match &desk {
        Ok(d) => {
            report(6, "scenario i ordering", scenario_one(d), took);
            report(7, "scenario ii ordering", scenario_two(d), took);
            report(8, "second-order scenarios", scenarios_with_second_order(d), took);
        }
        Err(e) => {
            for (id, name) in [(6, "scenario i ordering"), (7, "scenario ii ordering"), (8, "second-order scenarios")] {
                report(id, name, Err(anyhow::anyhow!("desk pipeline failed: {e:#}")), took);
            }
        }
    }

    let (v, t) = timed(&metrics_oracle);
    report(9, "metrics oracle", v, t);
    let (v, t) = timed(&determinism);
    report(10, "determinism", v, t);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
