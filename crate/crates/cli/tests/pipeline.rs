use std::path::Path;
use std::process::Command;

use cst_cli::config::{Method, RunConfig, Scenario};
use cst_cli::cstb::{self, CstbArray};
use cst_cli::manifest::{sha256_file, Manifest};
use cst_cli::pipeline::{self, Which, METRICS_HEADER};
use cst_core::matrix::{dot, norm, DenseMatrix};
use cst_core::solvers::{resesop_observed, stripe_of, subproblems, ResesopParams, UpdateEvent};

fn tiny(dir: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.grid = 8;
    c.n_s = 2;
    c.n_d = 3;
    c.energies = 6;
    c.i0 = 20_000;
    c.max_sweeps = 30;
    c.tv_every = 5;
    c.landweber_steps = 10;
    c.workdir = dir.to_path_buf();
    c
}

fn prepared(dir: &Path) -> RunConfig {
    let c = tiny(dir);
    pipeline::cmd_phantom(&c).unwrap();
    pipeline::cmd_assemble(&c, Which::Prior).unwrap();
    pipeline::cmd_simulate(&c).unwrap();
    pipeline::cmd_noise(&c).unwrap();
    c
}

fn with(c: &RunConfig, s: Scenario, m: Method) -> RunConfig {
    RunConfig { scenario: s, method: m, ..c.clone() }
}

#[test]
fn phantom_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.grid = 4;
    pipeline::cmd_phantom(&c).unwrap();
    let raster = cstb::read(&dir.path().join("gt_raster.cstb")).unwrap();
    assert_eq!(raster.dims, vec![8, 8]);
    let bytes = std::fs::read(dir.path().join("gt_raster.cstb")).unwrap();
    assert_eq!(cstb::encode(&raster).unwrap(), bytes);

    c.grid = 64;
    pipeline::cmd_phantom(&c).unwrap();
    let gt = cstb::read(&dir.path().join("gt_raster.cstb")).unwrap();
    let max = gt.values.iter().copied().fold(f64::MIN, f64::max);
    let min_nonzero = gt.values.iter().copied().filter(|&v| v > 0.0).fold(f64::MAX, f64::min);
    assert!((max - 5.66).abs() <= 0.01 && (min_nonzero - 1.36).abs() <= 0.01, "{min_nonzero} {max}");
    let prior = cstb::read(&dir.path().join("prior_raster.cstb")).unwrap();
    let mut levels: Vec<f64> = prior.values.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let has = |t: f64| levels.iter().any(|v| (v - t).abs() < 1e-9);
    assert!(levels.len() <= 3 && has(0.0) && has(0.67), "{levels:?}");
}

#[test]
fn exact_and_prior_matrices_differ() {
    let dir = tempfile::tempdir().unwrap();
    let c = prepared(dir.path());
    pipeline::cmd_assemble(&c, Which::Exact).unwrap();
    let read = |w: Which| cstb::read(&dir.path().join(w.matrix_file())).unwrap();
    let (exact, prior) = (read(Which::Exact), read(Which::Prior));
    assert_eq!(exact.dims, vec![6 * 6, 64]);
    assert_eq!(exact.dims, prior.dims);
    let gap: f64 = exact.values.iter().zip(&prior.values).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(gap > 0.0);
    let m = Manifest::read(&dir.path().join("assemble_exact.manifest")).unwrap();
    assert_eq!(m.params["attenuation"], "exact");
    assert_eq!(m.outputs["matrix_exact.cstb"], sha256_file(&dir.path().join("matrix_exact.cstb")).unwrap());
}

#[test]
fn vacuum_gives_silent_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path());
    let path = dir.path().join("gt_raster.cstb");
    cstb::write(&path, &[16, 16], &[0.0; 256]).unwrap();
    let mut m = Manifest::new("phantom");
    m.outputs.insert("gt_raster.cstb".into(), sha256_file(&path).unwrap());
    m.write(&dir.path().join("phantom.manifest")).unwrap();
    pipeline::cmd_simulate(&c).unwrap();
    for name in ["g1_exact.cstb", "g1_mc.cstb", "g2_mc.cstb"] {
        let a = cstb::read(&dir.path().join(name)).unwrap();
        assert_eq!(a.dims, vec![6, 6]);
        assert!(a.values.iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn reconstruct_refuses_edited_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = prepared(dir.path());
    pipeline::cmd_uncertainty(&c).unwrap();
    pipeline::cmd_reconstruct(&c).unwrap();
    let path = dir.path().join("data_i.cstb");
    let mut data = cstb::read(&path).unwrap();
    data.values[0] += 1.0;
    cstb::write(&path, &data.dims, &data.values).unwrap();
    let err = pipeline::cmd_reconstruct(&c).unwrap_err();
    assert!(format!("{err:#}").contains("does not match"), "{err:#}");

    std::fs::remove_file(dir.path().join("uncertainty_i.manifest")).unwrap();
    assert!(pipeline::cmd_reconstruct(&c).is_err());
}

#[test]
fn zero_weight_hybrid_equals_resesop() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = prepared(dir.path());
    c.lambda_denoise = 0.0;
    pipeline::cmd_uncertainty(&c).unwrap();
    let plain = pipeline::cmd_reconstruct(&with(&c, Scenario::I, Method::Resesop)).unwrap();
    let hybrid = pipeline::cmd_reconstruct(&with(&c, Scenario::I, Method::ResesopTv)).unwrap();
    assert_eq!(plain.image, hybrid.image);
}

#[test]
fn every_scenario_and_method_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let c = prepared(dir.path());
    for s in Scenario::ALL {
        let cs = with(&c, s, Method::Resesop);
        let map = pipeline::cmd_uncertainty(&cs).unwrap();
        let p = if s == Scenario::Iv { 5 } else { 6 };
        assert_eq!((map.p, map.k), (p, 6));
        assert_eq!(cstb::read(&dir.path().join(pipeline::uncertainty_file(s))).unwrap().dims, vec![2, p, 6]);
        for m in Method::ALL {
            let r = pipeline::cmd_reconstruct(&with(&c, s, m)).unwrap();
            assert!(r.metrics.nmse.is_finite());
            let image = cstb::read(&dir.path().join(format!("{}.cstb", pipeline::recon_stem(s, m)))).unwrap();
            assert_eq!(image.dims, vec![8, 8]);
        }
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 16);
    assert!(lines[1].starts_with("i,landweber,"));
    assert_eq!(lines[1].split(',').count(), 6);

    let m = pipeline::cmd_metrics(&c, &dir.path().join("gt_nodes.cstb")).unwrap();
    assert_eq!(m.nmse, 0.0);
}

#[test]
fn noise_and_eta_follow_their_definitions() {
    let dir = tempfile::tempdir().unwrap();
    let c = prepared(dir.path());
    let read = |n: &str| cstb::read(&dir.path().join(n)).unwrap().values;
    let (g1, noisy, delta) = (read("g1_exact.cstb"), read("g1_noisy.cstb"), read("noise_delta.cstb"));
    assert!(g1.iter().zip(&noisy).zip(&delta).all(|((a, b), d)| *d == (a - b).abs()));
    let map = pipeline::cmd_uncertainty(&with(&c, Scenario::Ii, Method::Resesop)).unwrap();
    assert_eq!(map.delta, delta);
    assert_eq!(read("data_ii.cstb"), noisy);
}

/// The projected ground truth lies in every stripe the solver builds.
#[test]
fn ground_truth_stays_in_every_stripe() {
    let dir = tempfile::tempdir().unwrap();
    let c = prepared(dir.path());
    for s in [Scenario::I, Scenario::Ii] {
        let map = pipeline::cmd_uncertainty(&with(&c, s, Method::Resesop)).unwrap();
        let matrix = cstb::read(&dir.path().join("matrix_prior.cstb")).unwrap();
        let (rows, cols) = matrix.shape2().unwrap();
        let a = DenseMatrix::new(rows, cols, matrix.values).unwrap();
        let data = cstb::read(&dir.path().join(pipeline::data_file(s))).unwrap().values;
        let truth = cstb::read(&dir.path().join("gt_coefficients.cstb")).unwrap().values;
        assert!(norm(&truth) <= map.rho);
        let subs = subproblems(&a, &data, &map.eta, &map.delta).unwrap();
        let mut checked = 0;
        let mut observe = |e: &UpdateEvent| {
            let st = stripe_of(e.subproblem, e.w, map.rho);
            let slack = 1e-9 * (st.xi + dot(&st.u, &truth).abs());
            assert!((dot(&st.u, &truth) - st.alpha).abs() <= st.xi + slack);
            checked += 1;
        };
        resesop_observed(&subs, &ResesopParams::new(c.tau, map.rho, 20, vec![0.0; cols]), &mut observe).unwrap();
        assert!(checked > 0);
    }
}

#[test]
fn png_export() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.cstb");
    cstb::write(&flat, &[3, 3], &[2.0; 9]).unwrap();
    let out = dir.path().join("flat.png");
    pipeline::cmd_export_png(&flat, &out, None).unwrap();
    let img = image::open(&out).unwrap().to_luma8();
    assert!(img.pixels().all(|p| p.0[0] == img.get_pixel(0, 0).0[0]));

    let gt = CstbArray::new(vec![2, 2], vec![0.0, 1.36, 2.0, 5.66]).unwrap();
    let img = pipeline::quantize(&gt, None).unwrap();
    assert_eq!(img.get_pixel(1, 0).0[0], 255);
    for (i, v) in gt.values.iter().enumerate() {
        let q = img.get_pixel((i % 2) as u32, (1 - i / 2) as u32).0[0] as f64;
        assert!((q * 5.66 / 255.0 - v).abs() <= 5.66 / 255.0);
    }
    let line = dir.path().join("line.cstb");
    cstb::write(&line, &[4], &[0.0; 4]).unwrap();
    assert!(pipeline::cmd_export_png(&line, &out, None).is_err());
}

#[test]
fn binary_resolves_presets_files_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# experiment\ngrid = 32\ntau = 1.2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cst"))
        .args(["show-config", "--preset", "desk", "--config"])
        .arg(&cfg)
        .args(["--tau", "1.5", "--scenario", "iv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut parsed = RunConfig::full();
    parsed.apply_text(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!((parsed.grid, parsed.n_d, parsed.tau, parsed.scenario), (32, 10, 1.5, Scenario::Iv));

    let bad = Command::new(env!("CARGO_BIN_EXE_cst")).args(["show-config", "--tau", "0.5"]).output().unwrap();
    assert!(!bad.status.success());
}
