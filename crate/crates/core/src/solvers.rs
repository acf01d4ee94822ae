//! Row-action reconstruction: SESOP/RESESOP-Kaczmarz with stripe
//! projections, Landweber, smoothed total variation and the RESESOP+TV
//! hybrid.

use std::fmt::Write as _;

use crate::error::{invalid, CstError, Result};
use crate::matrix::{axpy, dot, norm, DenseMatrix};

/// One scalar equation `<row, f> = datum` with its uncertainty bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subproblem<'a> {
    pub row: &'a [f64],
    pub datum: f64,
    pub eta: f64,
    pub delta: f64,
}

/// Subproblems from the rows of a matrix, in row order.
pub fn subproblems<'a>(m: &'a DenseMatrix, data: &[f64], eta: &[f64], delta: &[f64]) -> Result<Vec<Subproblem<'a>>> {
    if data.len() != m.rows || eta.len() != m.rows || delta.len() != m.rows {
        return Err(CstError::ShapeMismatch(format!(
            "{} rows but {} data, {} eta, {} delta",
            m.rows,
            data.len(),
            eta.len(),
            delta.len()
        )));
    }
    if eta.iter().chain(delta).any(|v| !(*v >= 0.0)) {
        return Err(invalid("eta and delta must be nonnegative"));
    }
    Ok((0..m.rows)
        .map(|r| Subproblem { row: m.row(r), datum: data[r], eta: eta[r], delta: delta[r] })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResesopParams {
    pub tau: f64,
    pub rho: f64,
    pub max_sweeps: usize,
    pub start: Vec<f64>,
    /// Keep one trace record per subproblem visit.
    pub record_events: bool,
}

impl ResesopParams {
    pub fn new(tau: f64, rho: f64, max_sweeps: usize, start: Vec<f64>) -> Self {
        ResesopParams { tau, rho, max_sweeps, start, record_events: false }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(invalid(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.rho > 0.0) {
            return Err(invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if self.start.len() != dim {
            return Err(CstError::ShapeMismatch(format!("start has {} entries, rows have {dim}", self.start.len())));
        }
        if norm(&self.start) > self.rho {
            return Err(invalid("start iterate lies outside the ball of radius rho"));
        }
        Ok(())
    }
}

/// Stripe `{x : |<u, x> - alpha| <= xi}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeGeometry {
    pub u: Vec<f64>,
    pub alpha: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Project,
    Skip,
    /// Discrepancy not met but the row is zero: nothing to project on.
    Infeasible,
}

impl Action {
    fn name(self) -> &'static str {
        match self {
            Action::Project => "project",
            Action::Skip => "skip",
            Action::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub sweep: usize,
    pub subproblem: usize,
    pub residual: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    /// Projections per sweep.
    pub updates: Vec<usize>,
    /// Discrepancy principle met at the final iterate, per subproblem.
    pub satisfied: Vec<bool>,
    pub infeasible: Vec<bool>,
    /// First sweep (0-based) without any projection.
    pub stopping_index: Option<usize>,
    pub residuals: Vec<f64>,
    /// Largest step length `|t_n| * |u_n|` taken.
    pub max_step: f64,
    pub events: Vec<TraceEvent>,
}

impl SolveTrace {
    pub fn sweeps(&self) -> usize {
        self.updates.len()
    }

    /// Line records `sweep subproblem residual action`; sweep summaries use
    /// `*` as subproblem and the largest residual of the final iterate.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# sweep subproblem residual action\n");
        for e in &self.events {
            let _ = writeln!(out, "{} {} {:e} {}", e.sweep, e.subproblem, e.residual, e.action.name());
        }
        for (s, n) in self.updates.iter().enumerate() {
            let _ = writeln!(out, "{s} * {n} updates");
        }
        let worst = self.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let _ = writeln!(out, "final * {worst:e} stop={:?}", self.stopping_index);
        out
    }
}

/// Projection of `x` onto `{y : <u, y> = alpha}`.
pub fn project_hyperplane(x: &[f64], u: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let uu = dot(u, u);
    if uu == 0.0 {
        return Err(CstError::DegenerateHyperplane);
    }
    let t = (dot(u, x) - alpha) / uu;
    let mut out = x.to_vec();
    axpy(-t, u, &mut out);
    Ok(out)
}

/// Projection of `x`, lying above the stripe, onto its upper boundary.
pub fn project_stripe(x: &[f64], stripe: &StripeGeometry) -> Result<Vec<f64>> {
    let uu = dot(&stripe.u, &stripe.u);
    if uu == 0.0 {
        return Err(CstError::InfeasibleStep);
    }
    let upper = stripe.alpha + stripe.xi;
    let ux = dot(&stripe.u, x);
    if ux < upper {
        return Err(CstError::ContractViolation(format!("<u, x> = {ux} lies below the stripe bound {upper}")));
    }
    let mut out = x.to_vec();
    axpy(-(ux - upper) / uu, &stripe.u, &mut out);
    Ok(out)
}

/// The stripe the algorithm builds for residual `w` of subproblem `sub`.
pub fn stripe_of(sub: &Subproblem, w: f64, rho: f64) -> StripeGeometry {
    StripeGeometry {
        u: sub.row.iter().map(|r| w * r).collect(),
        alpha: w * sub.datum,
        xi: (rho * sub.eta + sub.delta) * w.abs(),
    }
}

/// What an observer sees at every projection.
pub struct UpdateEvent<'a> {
    pub sweep: usize,
    pub index: usize,
    pub subproblem: &'a Subproblem<'a>,
    /// Residual `<row, f_n> - datum`.
    pub w: f64,
    pub before: &'a [f64],
    pub after: &'a [f64],
}

/// RESESOP-Kaczmarz.
pub fn resesop_kaczmarz(subs: &[Subproblem], params: &ResesopParams) -> Result<(Vec<f64>, SolveTrace)> {
    run_resesop(subs, params, None, None)
}

/// RESESOP-Kaczmarz calling `observer` after every projection.
pub fn resesop_observed(
    subs: &[Subproblem],
    params: &ResesopParams,
    observer: &mut dyn FnMut(&UpdateEvent),
) -> Result<(Vec<f64>, SolveTrace)> {
    run_resesop(subs, params, Some(observer), None)
}

/// Hook run after every sweep; may modify the iterate.
type SweepHook<'a> = &'a mut dyn FnMut(usize, &mut Vec<f64>) -> Result<()>;

fn run_resesop(
    subs: &[Subproblem],
    params: &ResesopParams,
    mut observer: Option<&mut dyn FnMut(&UpdateEvent)>,
    mut after_sweep: Option<SweepHook>,
) -> Result<(Vec<f64>, SolveTrace)> {
    let dim = params.start.len();
    if subs.iter().any(|s| s.row.len() != dim) {
        return Err(CstError::ShapeMismatch("subproblem rows differ from the start dimension".into()));
    }
    params.validate(dim)?;
    let row_norms: Vec<f64> = subs.iter().map(|s| dot(s.row, s.row)).collect();
    let mut f = params.start.clone();
    let mut before = Vec::new();
    let mut trace = SolveTrace { infeasible: vec![false; subs.len()], ..Default::default() };

    for sweep in 0..params.max_sweeps {
        let mut updates = 0;
        for (i, sub) in subs.iter().enumerate() {
            let w = dot(sub.row, &f) - sub.datum;
            let bound = params.rho * sub.eta + sub.delta;
            let action = if w.abs() <= params.tau * bound {
                Action::Skip
            } else if row_norms[i] == 0.0 {
                trace.infeasible[i] = true;
                Action::Infeasible
            } else {
                if observer.is_some() {
                    before.clone_from(&f);
                }
                // stripe projection with u = w * row, written in terms of the row
                let t = w.signum() * (w.abs() - bound) / row_norms[i];
                axpy(-t, sub.row, &mut f);
                trace.max_step = trace.max_step.max(t.abs() * row_norms[i].sqrt());
                updates += 1;
                if let Some(obs) = observer.as_mut() {
                    obs(&UpdateEvent { sweep, index: i, subproblem: sub, w, before: &before, after: &f });
                }
                Action::Project
            };
            if params.record_events {
                trace.events.push(TraceEvent { sweep, subproblem: i, residual: w, action });
            }
        }
        trace.updates.push(updates);
        if updates == 0 {
            trace.stopping_index = Some(sweep);
            break;
        }
        if let Some(hook) = after_sweep.as_mut() {
            hook(sweep, &mut f)?;
        }
    }
    finish_trace(subs, params.tau, params.rho, &f, &mut trace);
    Ok((f, trace))
}

fn finish_trace(subs: &[Subproblem], tau: f64, rho: f64, f: &[f64], trace: &mut SolveTrace) {
    trace.residuals = subs.iter().map(|s| dot(s.row, f) - s.datum).collect();
    trace.satisfied = subs
        .iter()
        .zip(&trace.residuals)
        .map(|(s, r)| r.abs() <= tau * (rho * s.eta + s.delta))
        .collect();
}

/// SESOP-Kaczmarz for exact data: stripes degenerate to hyperplanes. Stops
/// once a sweep moves the iterate by less than `tolerance * |f|`.
pub fn sesop(subs: &[Subproblem], start: &[f64], max_sweeps: usize, tolerance: f64) -> Result<(Vec<f64>, SolveTrace)> {
    let dim = start.len();
    if subs.iter().any(|s| s.row.len() != dim) {
        return Err(CstError::ShapeMismatch("subproblem rows differ from the start dimension".into()));
    }
    let row_norms: Vec<f64> = subs.iter().map(|s| dot(s.row, s.row)).collect();
    let mut f = start.to_vec();
    let mut trace = SolveTrace { infeasible: vec![false; subs.len()], ..Default::default() };
    for sweep in 0..max_sweeps {
        let mut moved = 0.0f64;
        let mut updates = 0;
        for (i, sub) in subs.iter().enumerate() {
            let w = dot(sub.row, &f) - sub.datum;
            if w == 0.0 {
                continue;
            }
            if row_norms[i] == 0.0 {
                trace.infeasible[i] = true;
                continue;
            }
            let t = w / row_norms[i];
            axpy(-t, sub.row, &mut f);
            let step = t.abs() * row_norms[i].sqrt();
            moved = moved.max(step);
            trace.max_step = trace.max_step.max(step);
            updates += 1;
        }
        trace.updates.push(updates);
        if moved <= tolerance * norm(&f) {
            trace.stopping_index = Some(sweep);
            break;
        }
    }
    // exact data: the discrepancy principle with tau = 1 and zero bounds
    trace.residuals = subs.iter().map(|s| dot(s.row, &f) - s.datum).collect();
    let scale = norm(&f).max(1.0);
    trace.satisfied = trace.residuals.iter().zip(&row_norms).map(|(r, n)| r.abs() <= 1e-10 * n.sqrt() * scale).collect();
    Ok((f, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Residual norm before each iteration and after the last.
    pub residuals: Vec<f64>,
}

/// Landweber iteration `f += step * A^T (g - A f)`. With `stop_at`, stops
/// as soon as the residual norm drops to that value (discrepancy principle).
pub fn landweber(
    matrix: &DenseMatrix,
    data: &[f64],
    step: f64,
    iterations: usize,
    start: &[f64],
    stop_at: Option<f64>,
) -> Result<LandweberOutcome> {
    if data.len() != matrix.rows || start.len() != matrix.cols {
        return Err(CstError::ShapeMismatch("Landweber data or start does not match the matrix".into()));
    }
    let a_norm = matrix.spectral_norm(500);
    let limit = 2.0 / (a_norm * a_norm);
    if !(step > 0.0 && step < limit) {
        return Err(invalid(format!("Landweber step {step} outside (0, {limit})")));
    }
    let mut f = start.to_vec();
    let mut residuals = Vec::with_capacity(iterations + 1);
    let mut done = 0;
    loop {
        let r: Vec<f64> = data.iter().zip(matrix.matvec(&f)).map(|(g, af)| g - af).collect();
        let rn = norm(&r);
        residuals.push(rn);
        if done == iterations || stop_at.is_some_and(|s| rn <= s) {
            break;
        }
        axpy(step, &matrix.matvec_t(&r), &mut f);
        done += 1;
    }
    Ok(LandweberOutcome { solution: f, iterations: done, residuals })
}

/// Largest admissible Landweber step scaled by `fraction` in (0, 1).
pub fn landweber_step(matrix: &DenseMatrix, fraction: f64) -> f64 {
    let a = matrix.spectral_norm(500);
    fraction * 2.0 / (a * a)
}

/// Smoothed total variation of an `n x n` image (row-major), with forward
/// differences and a zero difference across the last row and column.
pub fn smoothed_tv(image: &[f64], n: usize, beta: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (dx, dy) = diffs(image, n, i, j);
            total += (dx * dx + dy * dy + beta).sqrt();
        }
    }
    total
}

#[inline]
fn diffs(image: &[f64], n: usize, i: usize, j: usize) -> (f64, f64) {
    let v = image[j * n + i];
    let dx = if i + 1 < n { image[j * n + i + 1] - v } else { 0.0 };
    let dy = if j + 1 < n { image[(j + 1) * n + i] - v } else { 0.0 };
    (dx, dy)
}

fn smoothed_tv_gradient(image: &[f64], n: usize, beta: f64) -> Vec<f64> {
    let mut grad = vec![0.0; image.len()];
    for j in 0..n {
        for i in 0..n {
            let (dx, dy) = diffs(image, n, i, j);
            let s = (dx * dx + dy * dy + beta).sqrt();
            let (gx, gy) = (dx / s, dy / s);
            let here = j * n + i;
            if i + 1 < n {
                grad[here + 1] += gx;
                grad[here] -= gx;
            }
            if j + 1 < n {
                grad[here + n] += gy;
                grad[here] -= gy;
            }
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvOutcome {
    pub image: Vec<f64>,
    /// Objective before each step and after the last.
    pub objective: Vec<f64>,
}

/// Gradient descent with backtracking on `|B f - g|^2 + lambda TV_beta(f)`
/// over an `n x n` image. `operator = None` means `B = I` (denoising).
#[allow(clippy::too_many_arguments)]
pub fn tv_reconstruct(
    operator: Option<&DenseMatrix>,
    data: &[f64],
    start: &[f64],
    n: usize,
    lambda: f64,
    beta: f64,
    steps: usize,
    step_size: f64,
) -> Result<TvOutcome> {
    if !(beta > 0.0) {
        return Err(invalid(format!("TV smoothing beta must be positive, got {beta}")));
    }
    if !(lambda >= 0.0) || !(step_size > 0.0) {
        return Err(invalid("TV weight must be nonnegative and the step positive"));
    }
    if start.len() != n * n {
        return Err(CstError::ShapeMismatch(format!("image of {} values is not {n}x{n}", start.len())));
    }
    let expected = operator.map_or(n * n, |b| b.rows);
    if data.len() != expected || operator.is_some_and(|b| b.cols != n * n) {
        return Err(CstError::ShapeMismatch("TV data does not match the operator".into()));
    }
    let residual = |f: &[f64]| -> Vec<f64> {
        match operator {
            Some(b) => b.matvec(f).iter().zip(data).map(|(a, g)| a - g).collect(),
            None => f.iter().zip(data).map(|(a, g)| a - g).collect(),
        }
    };
    let objective = |f: &[f64], r: &[f64]| dot(r, r) + if lambda > 0.0 { lambda * smoothed_tv(f, n, beta) } else { 0.0 };

    let mut f = start.to_vec();
    let mut r = residual(&f);
    let mut j = objective(&f, &r);
    let mut history = vec![j];
    let mut t = step_size;
    for _ in 0..steps {
        let mut grad = match operator {
            Some(b) => b.matvec_t(&r),
            None => r.clone(),
        };
        grad.iter_mut().for_each(|g| *g *= 2.0);
        if lambda > 0.0 {
            axpy(lambda, &smoothed_tv_gradient(&f, n, beta), &mut grad);
        }
        let gg = dot(&grad, &grad);
        if gg == 0.0 {
            history.push(j);
            continue;
        }
        // Armijo backtracking; the trial step grows back after a success
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = f.clone();
            axpy(-t, &grad, &mut trial);
            let tr = residual(&trial);
            let tj = objective(&trial, &tr);
            if tj <= j - 1e-4 * t * gg {
                f = trial;
                r = tr;
                j = tj;
                accepted = true;
                t *= 2.0;
                break;
            }
            t *= 0.5;
        }
        history.push(j);
        if !accepted {
            break;
        }
    }
    Ok(TvOutcome { image: f, objective: history })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSchedule {
    /// Sweeps between denoising phases.
    pub every: usize,
    pub steps: usize,
    pub lambda: f64,
    pub beta: f64,
    /// Initial step of the denoising line search.
    pub step_size: f64,
    /// Side of the square coefficient grid.
    pub n: usize,
}

/// RESESOP-Kaczmarz with a few TV denoising steps after every
/// `schedule.every` sweeps.
pub fn resesop_tv(subs: &[Subproblem], params: &ResesopParams, schedule: &TvSchedule) -> Result<(Vec<f64>, SolveTrace)> {
    if schedule.every == 0 {
        return Err(invalid("TV phases need a positive sweep interval"));
    }
    let mut hook = |sweep: usize, f: &mut Vec<f64>| -> Result<()> {
        if (sweep + 1) % schedule.every == 0 && schedule.lambda > 0.0 && schedule.steps > 0 {
            let out = tv_reconstruct(None, f, f, schedule.n, schedule.lambda, schedule.beta, schedule.steps, schedule.step_size)?;
            *f = out.image;
        }
        Ok(())
    };
    run_resesop(subs, params, None, Some(&mut hook))
}
