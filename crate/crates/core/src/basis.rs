//! Truncated Gaussian basis on a regular grid: the finite subspace in which
//! densities are reconstructed.

use statrs::function::erf::erf;

use crate::error::{invalid, CstError, Result};
use crate::field::Field;
use crate::geometry::Point;
use crate::quadrature::{gauss_legendre, integrate, TrapezoidAxis};

/// Width of each Gaussian relative to the grid step.
pub const SIGMA_FACTOR: f64 = 0.5;
/// Truncation radius relative to the grid step.
pub const TRUNCATION_FACTOR: f64 = 1.5;
/// Most basis functions nonzero at any single point.
pub const MAX_SUPPORT: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBasis {
    pub n: usize,
    pub extent: f64,
    pub h: f64,
    pub sigma: f64,
    pub trunc_radius: f64,
    /// `c_nm`, indexed `m * n + n` (y index outermost).
    pub norm_constants: Vec<f64>,
}

/// Nonzero basis values at one point.
#[derive(Debug, Clone, Copy)]
pub struct Support {
    pub len: usize,
    pub index: [usize; MAX_SUPPORT],
    pub value: [f64; MAX_SUPPORT],
}

impl Support {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.index[..self.len].iter().copied().zip(self.value[..self.len].iter().copied())
    }
}

pub fn build_basis(n: usize, extent: f64) -> Result<GaussianBasis> {
    if n < 2 {
        return Err(invalid(format!("basis grid needs N >= 2, got {n}")));
    }
    if !(extent > 0.0) {
        return Err(invalid(format!("extent must be positive, got {extent}")));
    }
    let h = extent / n as f64;
    let mut basis = GaussianBasis {
        n,
        extent,
        h,
        sigma: SIGMA_FACTOR * h,
        trunc_radius: TRUNCATION_FACTOR * h,
        norm_constants: Vec::with_capacity(n * n),
    };
    let rule = gauss_legendre(48);
    for m in 0..n {
        for i in 0..n {
            let sq = basis.unnormalized_square_integral(basis.node(i, m), &rule);
            basis.norm_constants.push(1.0 / sq.sqrt());
        }
    }
    Ok(basis)
}

impl GaussianBasis {
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn origin(&self) -> f64 {
        -0.5 * self.extent
    }

    pub fn node(&self, i: usize, m: usize) -> Point {
        Point::new(self.origin() + i as f64 * self.h, self.origin() + m as f64 * self.h)
    }

    pub fn node_of_index(&self, idx: usize) -> Point {
        self.node(idx % self.n, idx / self.n)
    }

    pub fn contains(&self, p: Point) -> bool {
        let half = 0.5 * self.extent;
        p.x.abs() <= half && p.y.abs() <= half
    }

    /// Value of basis function `idx` at `p`.
    pub fn eval(&self, idx: usize, p: Point) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        let d2 = (p - self.node_of_index(idx)).dot(p - self.node_of_index(idx));
        if d2 >= self.trunc_radius * self.trunc_radius {
            return 0.0;
        }
        self.norm_constants[idx] * (-0.5 * d2 / (self.sigma * self.sigma)).exp()
    }

    /// All basis functions that do not vanish at `p`.
    pub fn support(&self, p: Point) -> Support {
        let mut s = Support { len: 0, index: [0; MAX_SUPPORT], value: [0.0; MAX_SUPPORT] };
        if !self.contains(p) {
            return s;
        }
        let r = self.trunc_radius;
        let r2 = r * r;
        let inv2s2 = 0.5 / (self.sigma * self.sigma);
        let o = self.origin();
        let last = self.n as isize - 1;
        let i0 = (((p.x - r - o) / self.h).ceil() as isize).max(0);
        let i1 = (((p.x + r - o) / self.h).floor() as isize).min(last);
        let m0 = (((p.y - r - o) / self.h).ceil() as isize).max(0);
        let m1 = (((p.y + r - o) / self.h).floor() as isize).min(last);
        for m in m0..=m1 {
            let dy = p.y - (o + m as f64 * self.h);
            for i in i0..=i1 {
                let dx = p.x - (o + i as f64 * self.h);
                let d2 = dx * dx + dy * dy;
                if d2 < r2 {
                    let idx = m as usize * self.n + i as usize;
                    s.index[s.len] = idx;
                    s.value[s.len] = self.norm_constants[idx] * (-d2 * inv2s2).exp();
                    s.len += 1;
                }
            }
        }
        s
    }

    /// Integral of exp(-|x - c|^2 / sigma^2) over the truncation disc
    /// clipped to the domain, as a 1D integral of closed-form strips.
    fn unnormalized_square_integral(&self, c: Point, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
        let half = 0.5 * self.extent;
        let r = self.trunc_radius;
        let s = self.sigma;
        let strip = |u: f64, half_chord: f64| -> f64 {
            let lo = (-half_chord).max(-half - c.y);
            let hi = half_chord.min(half - c.y);
            if hi <= lo {
                return 0.0;
            }
            0.5 * s * std::f64::consts::PI.sqrt() * (erf(hi / s) - erf(lo / s)) * (-(u * u) / (s * s)).exp()
        };
        // u = r sin(theta) removes the square-root endpoint behaviour
        let u_lo = (-r).max(-half - c.x);
        let u_hi = r.min(half - c.x);
        let t_lo = (u_lo / r).clamp(-1.0, 1.0).asin();
        let t_hi = (u_hi / r).clamp(-1.0, 1.0).asin();
        let mut breaks = vec![t_lo, t_hi];
        for wall in [half - c.y, half + c.y] {
            if wall > 0.0 && wall < r {
                let t = (wall / r).acos();
                breaks.extend([t, -t]);
            }
        }
        breaks.retain(|&t| t >= t_lo && t <= t_hi);
        breaks.sort_by(f64::total_cmp);
        breaks
            .windows(2)
            .map(|w| {
                integrate(rule, w[0], w[1], |t| {
                    let (sin, cos) = t.sin_cos();
                    strip(r * sin, r * cos) * r * cos
                })
            })
            .sum()
    }
}

/// Coefficients over a [`GaussianBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientImage<'a> {
    pub basis: &'a GaussianBasis,
    pub coefficients: Vec<f64>,
}

impl<'a> CoefficientImage<'a> {
    pub fn new(basis: &'a GaussianBasis, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.dim() {
            return Err(CstError::ShapeMismatch(format!(
                "{} coefficients for a basis of dimension {}",
                coefficients.len(),
                basis.dim()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        Ok(CoefficientImage { basis, coefficients })
    }

    pub fn zeros(basis: &'a GaussianBasis) -> Self {
        CoefficientImage { basis, coefficients: vec![0.0; basis.dim()] }
    }

    pub fn unit(basis: &'a GaussianBasis, idx: usize) -> Self {
        let mut c = Self::zeros(basis);
        c.coefficients[idx] = 1.0;
        c
    }

    /// Field value at `p`.
    pub fn at(&self, p: Point) -> f64 {
        self.basis.support(p).iter().map(|(i, v)| self.coefficients[i] * v).sum()
    }

    /// Values at the basis nodes as an `n x n` row-major image.
    pub fn node_image(&self) -> Vec<f64> {
        (0..self.basis.dim()).map(|i| self.at(self.basis.node_of_index(i))).collect()
    }
}

impl Field for CoefficientImage<'_> {
    fn value(&self, p: Point) -> f64 {
        self.at(p)
    }
}

/// Evaluate the expansion at each point.
pub fn synthesize(c: &CoefficientImage, points: &[Point]) -> Vec<f64> {
    points.iter().map(|&p| c.at(p)).collect()
}

/// Sparse evaluation matrix of the basis on a trapezoid grid, the discrete
/// inner product used for least-squares projection.
struct QuadratureDesign {
    weights: Vec<f64>,
    points: Vec<Point>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    dim: usize,
}

impl QuadratureDesign {
    fn new(basis: &GaussianBasis, refine: usize) -> Self {
        let axis = TrapezoidAxis::new(basis.origin(), -basis.origin(), basis.n * refine);
        let mut d = QuadratureDesign {
            weights: Vec::new(),
            points: Vec::new(),
            row_start: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            dim: basis.dim(),
        };
        for j in 0..axis.nodes() {
            for i in 0..axis.nodes() {
                let p = Point::new(axis.coord(i), axis.coord(j));
                let s = basis.support(p);
                if s.len == 0 {
                    continue;
                }
                d.points.push(p);
                d.weights.push(axis.weight(i) * axis.weight(j));
                for (idx, v) in s.iter() {
                    d.cols.push(idx);
                    d.vals.push(v);
                }
                d.row_start.push(d.cols.len());
            }
        }
        d
    }

    fn rows(&self) -> impl Iterator<Item = (usize, &[usize], &[f64])> {
        (0..self.points.len()).map(move |q| {
            let (a, b) = (self.row_start[q], self.row_start[q + 1]);
            (q, &self.cols[a..b], &self.vals[a..b])
        })
    }

    fn rhs(&self, f: &(impl Field + ?Sized)) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        for (q, cols, vals) in self.rows() {
            let fv = self.weights[q] * f.value(self.points[q]);
            if fv != 0.0 {
                for (&c, &v) in cols.iter().zip(vals) {
                    b[c] += fv * v;
                }
            }
        }
        b
    }

    fn gram_apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (q, cols, vals) in self.rows() {
            let s: f64 = cols.iter().zip(vals).map(|(&c, &v)| x[c] * v).sum();
            let s = s * self.weights[q];
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += s * v;
            }
        }
    }

    fn gram_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.dim];
        for (q, cols, vals) in self.rows() {
            for (&c, &v) in cols.iter().zip(vals) {
                diag[c] += self.weights[q] * v * v;
            }
        }
        diag
    }

    /// Preconditioned conjugate gradients on the Gram system.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let diag = self.gram_diagonal();
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(CstError::IllConditionedBasis("basis function with empty quadrature support".into()));
        }
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 20 * n.max(50);
        for _ in 0..max_iter {
            self.gram_apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(CstError::IllConditionedBasis("Gram matrix is not positive definite".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= 1e-14 * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(CstError::IllConditionedBasis("conjugate gradients did not converge".into()))
    }
}

/// Quadrature refinement used for least-squares projection (step h/4).
pub const PROJECTION_REFINE: usize = 4;

/// Least-squares fit of `f` in the span of the basis, using the trapezoid
/// inner product on a grid of step h/4.
pub fn project_l2<'a>(f: &(impl Field + ?Sized), basis: &'a GaussianBasis) -> Result<CoefficientImage<'a>> {
    let design = QuadratureDesign::new(basis, PROJECTION_REFINE);
    let b = design.rhs(f);
    let c = design.solve(&b)?;
    Ok(CoefficientImage { basis, coefficients: c })
}

/// A coarse basis embedded approximately into a finer one.
#[derive(Debug, Clone)]
pub struct Coarsening {
    pub coarse: GaussianBasis,
    /// `fine.dim() x coarse.dim()` row-major; column `j` holds the fine
    /// coefficients of coarse function `j`.
    pub inclusion: Vec<f64>,
    pub fine_dim: usize,
}

impl Coarsening {
    pub fn column(&self, j: usize) -> Vec<f64> {
        let cd = self.coarse.dim();
        (0..self.fine_dim).map(|i| self.inclusion[i * cd + j]).collect()
    }

    /// Map coarse coefficients to fine coefficients.
    pub fn include(&self, coarse: &[f64]) -> Vec<f64> {
        let cd = self.coarse.dim();
        (0..self.fine_dim)
            .map(|i| self.inclusion[i * cd..(i + 1) * cd].iter().zip(coarse).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn coarsen(basis: &GaussianBasis, factor: usize) -> Result<Coarsening> {
    if factor == 0 || basis.n % factor != 0 {
        return Err(invalid(format!("factor {factor} does not divide N = {}", basis.n)));
    }
    let fine_dim = basis.dim();
    if factor == 1 {
        let mut inclusion = vec![0.0; fine_dim * fine_dim];
        for i in 0..fine_dim {
            inclusion[i * fine_dim + i] = 1.0;
        }
        return Ok(Coarsening { coarse: basis.clone(), inclusion, fine_dim });
    }
    let coarse = build_basis(basis.n / factor, basis.extent)?;
    let cd = coarse.dim();
    let design = QuadratureDesign::new(basis, PROJECTION_REFINE * factor);
    let mut inclusion = vec![0.0; fine_dim * cd];
    for j in 0..cd {
        let b = design.rhs(&|p: Point| coarse.eval(j, p));
        let col = design.solve(&b)?;
        for (i, v) in col.into_iter().enumerate() {
            inclusion[i * cd + j] = v;
        }
    }
    Ok(Coarsening { coarse, inclusion, fine_dim })
}
