//! First-order scattering operator: weights, spectra, matrix assembly, the
//! nonlinear self-attenuating operator and its derivative.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::basis::{CoefficientImage, GaussianBasis};
use crate::error::{invalid, CstError, Result};
use crate::field::{Field, Zero};
use crate::geometry::{compton_energy_unchecked, scatter_cos, EnergyGrid, Point, ScanGeometry, ELECTRON_REST_ENERGY};
use crate::matrix::DenseMatrix;
use crate::phantom::{Raster, WATER_ELECTRON_DENSITY};
use crate::quadrature::TrapezoidAxis;

/// Classical electron radius, cm.
pub const CLASSICAL_ELECTRON_RADIUS: f64 = 2.8179403262e-13;

/// Default number of quadrature sub-cells per fine-grid cell and axis.
pub const DEFAULT_OVERSAMPLE: usize = 4;

/// Tuples assembled concurrently before their rows are copied out.
const ASSEMBLY_BATCH: usize = 16;

/// Total Klein-Nishina cross-section per electron at energy `e` (keV), cm^2.
pub fn klein_nishina_total(e: f64) -> f64 {
    let eps = e / ELECTRON_REST_ENERGY;
    let l = (1.0 + 2.0 * eps).ln();
    let t1 = (1.0 + eps) / (eps * eps) * (2.0 * (1.0 + eps) / (1.0 + 2.0 * eps) - l / eps);
    let t2 = l / (2.0 * eps);
    let t3 = (1.0 + 3.0 * eps) / ((1.0 + 2.0 * eps) * (1.0 + 2.0 * eps));
    2.0 * PI * CLASSICAL_ELECTRON_RADIUS * CLASSICAL_ELECTRON_RADIUS * (t1 + t2 - t3)
}

/// Grid sizes shared by every discretized operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    /// Reconstruction grid size `N`; the grid step is `h = extent / N`.
    pub n: usize,
    pub extent: f64,
    /// Quadrature sub-cells per fine-grid cell along each axis.
    pub oversample: usize,
}

impl Discretization {
    pub fn new(n: usize, extent: f64, oversample: usize) -> Result<Self> {
        if n < 2 || oversample == 0 || !(extent > 0.0) {
            return Err(invalid(format!(
                "discretization needs N >= 2, oversample >= 1 and a positive extent (got {n}, {oversample}, {extent})"
            )));
        }
        Ok(Discretization { n, extent, oversample })
    }

    pub fn h(&self) -> f64 {
        self.extent / self.n as f64
    }

    /// Step of the fine grid (weight tables, rasters, line integrals).
    pub fn fine_step(&self) -> f64 {
        0.5 * self.h()
    }

    /// Nodes of the weight tables: the fine grid including both walls.
    pub fn table_axis(&self) -> TrapezoidAxis {
        TrapezoidAxis::new(-0.5 * self.extent, 0.5 * self.extent, 2 * self.n)
    }

    pub fn quadrature_axis(&self) -> TrapezoidAxis {
        TrapezoidAxis::new(-0.5 * self.extent, 0.5 * self.extent, 2 * self.n * self.oversample)
    }

    /// Sample `field` on the fine raster used for attenuation.
    pub fn fine_raster(&self, field: &(impl Field + ?Sized)) -> Raster {
        Raster::sample(2 * self.n, -0.5 * self.extent, self.fine_step(), field)
    }

    /// Same grids with the quadrature step halved.
    pub fn refined(&self) -> Self {
        Discretization { oversample: 2 * self.oversample, ..*self }
    }
}

/// Linearized attenuation: `mu(x, E) = water_density * sigma_KN(E) * f(x)`.
#[derive(Clone, Copy)]
pub struct AttenuationModel<'a> {
    pub density: &'a dyn Field,
    pub water_density: f64,
    /// Sampling step of line integrals, cm.
    pub step: f64,
    /// The density vanishes outside `[-half_extent, half_extent]^2`.
    pub half_extent: f64,
}

impl std::fmt::Debug for AttenuationModel<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttenuationModel")
            .field("water_density", &self.water_density)
            .field("step", &self.step)
            .field("half_extent", &self.half_extent)
            .finish_non_exhaustive()
    }
}

impl<'a> AttenuationModel<'a> {
    pub fn new(density: &'a dyn Field, water_density: f64, disc: &Discretization) -> Self {
        AttenuationModel { density, water_density, step: disc.fine_step(), half_extent: 0.5 * disc.extent }
    }

    pub fn vacuum(disc: &Discretization) -> AttenuationModel<'static> {
        AttenuationModel {
            density: &Zero,
            water_density: WATER_ELECTRON_DENSITY,
            step: disc.fine_step(),
            half_extent: 0.5 * disc.extent,
        }
    }

    pub fn sigma_total(&self, e: f64) -> f64 {
        klein_nishina_total(e)
    }

    /// Linear attenuation coefficient at `p` for energy `e`, 1/cm.
    pub fn mu(&self, p: Point, e: f64) -> f64 {
        self.water_density * klein_nishina_total(e) * self.density.value(p)
    }

    /// Trapezoid integral of the relative density along the segment `a -> b`,
    /// clipped to the domain square.
    pub fn line_integral(&self, a: Point, b: Point) -> f64 {
        line_integral(self.density, a, b, self.step, self.half_extent)
    }
}

fn line_integral(density: &(impl Field + ?Sized), a: Point, b: Point, step: f64, half: f64) -> f64 {
    let Some((t0, t1)) = clip_to_square(a, b, half) else {
        return 0.0;
    };
    let dir = b - a;
    let len = (t1 - t0) * dir.norm();
    if len <= 0.0 {
        return 0.0;
    }
    let intervals = (len / step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / intervals as f64;
    let mut sum = 0.5 * (density.value(a + dir * t0) + density.value(a + dir * t1));
    for i in 1..intervals {
        sum += density.value(a + dir * (t0 + i as f64 * dt));
    }
    sum * len / intervals as f64
}

/// Parameter range of `a + t (b - a)`, `t` in [0, 1], inside the square.
fn clip_to_square(a: Point, b: Point, half: f64) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (start, delta) in [(a.x, b.x - a.x), (a.y, b.y - a.y)] {
        if delta == 0.0 {
            if start.abs() > half {
                return None;
            }
            continue;
        }
        let u = (-half - start) / delta;
        let v = (half - start) / delta;
        t0 = t0.max(u.min(v));
        t1 = t1.min(u.max(v));
    }
    (t0 < t1).then_some((t0, t1))
}

/// Energy of a photon scattered once at `x` on its way from `s` to `d`;
/// points on the source-detector line keep the full energy.
#[inline]
fn scattered_energy(x: Point, d: Point, s: Point, e0: f64) -> f64 {
    scatter_cos(x, d, s).map_or(e0, |c| compton_energy_unchecked(e0, c))
}

/// Attenuation and photometric dispersion factor with constant 1.
pub fn weight_w1(mu: &AttenuationModel, x: Point, d: Point, s: Point, e0: f64) -> Result<f64> {
    let rs = x.dist(s);
    let rd = x.dist(d);
    if rs == 0.0 || rd == 0.0 {
        return Err(CstError::SingularWeight);
    }
    let e = scattered_energy(x, d, s, e0);
    let exponent = mu.water_density
        * (klein_nishina_total(e0) * mu.line_integral(s, x) + klein_nishina_total(e) * mu.line_integral(x, d));
    Ok((-exponent).exp() / (rs * rs * rd * rd))
}

/// Per-energy, per-tuple data, stored `values[p * k_count + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub p: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(p: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != p * k {
            return Err(CstError::ShapeMismatch(format!("{} values for a {p}x{k} spectrum", values.len())));
        }
        Ok(Spectrum { p, k, values })
    }

    pub fn zeros(p: usize, k: usize) -> Self {
        Spectrum { p, k, values: vec![0.0; p * k] }
    }

    #[inline]
    pub fn at(&self, p: usize, k: usize) -> f64 {
        self.values[p * self.k + k]
    }

    pub fn norm(&self) -> f64 {
        crate::matrix::norm(&self.values)
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn same_shape(&self, other: &Spectrum) -> Result<()> {
        if self.p != other.p || self.k != other.k {
            return Err(CstError::ShapeMismatch(format!(
                "spectra of shape {}x{} and {}x{}",
                self.p, self.k, other.p, other.k
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.same_shape(other)?;
        Ok(Spectrum { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(), ..*self })
    }

    pub fn sub(&self, other: &Spectrum) -> Result<Spectrum> {
        self.same_shape(other)?;
        Ok(Spectrum { values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(), ..*self })
    }

    pub fn scaled(&self, s: f64) -> Spectrum {
        Spectrum { values: self.values.iter().map(|v| s * v).collect(), ..*self }
    }
}

/// Dense matrix of the fully discrete operator; row `p * K + k`, column = basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMatrix {
    pub matrix: DenseMatrix,
    pub p: usize,
    pub k: usize,
    /// Free-form name of the attenuation map the weights were built from.
    pub attenuation: String,
}

impl ForwardMatrix {
    pub fn apply(&self, c: &[f64]) -> Spectrum {
        Spectrum { p: self.p, k: self.k, values: self.matrix.matvec(c) }
    }
}

/// Scanner, energy sampling and grids of one operator.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSetup<'a> {
    pub geometry: &'a ScanGeometry,
    pub grid: &'a EnergyGrid,
    pub disc: Discretization,
}

impl<'a> ForwardSetup<'a> {
    pub fn new(geometry: &'a ScanGeometry, grid: &'a EnergyGrid, disc: Discretization) -> Self {
        ForwardSetup { geometry, grid, disc }
    }

    pub fn rows(&self) -> usize {
        self.grid.len() * self.geometry.tuple_count()
    }
}

/// Values on the fine-grid nodes of the domain with bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub axis: TrapezoidAxis,
    pub values: Vec<f64>,
}

impl WeightTable {
    #[inline]
    pub fn interp(&self, p: Point) -> f64 {
        let n = self.axis.nodes();
        let cell = |v: f64| {
            let f = (v - self.axis.lo) / self.axis.step;
            let i = (f.floor().max(0.0) as usize).min(n - 2);
            (i, (f - i as f64).clamp(0.0, 1.0))
        };
        let (i, tx) = cell(p.x);
        let (j, ty) = cell(p.y);
        let v = &self.values;
        let a = (1.0 - tx) * v[j * n + i] + tx * v[j * n + i + 1];
        let b = (1.0 - tx) * v[(j + 1) * n + i] + tx * v[(j + 1) * n + i + 1];
        (1.0 - ty) * a + ty * b
    }
}

fn table_nodes(axis: &TrapezoidAxis) -> impl Iterator<Item = Point> + '_ {
    let n = axis.nodes();
    (0..n * n).map(move |idx| Point::new(axis.coord(idx % n), axis.coord(idx / n)))
}

/// Line integrals of `density` from `from` to every table node.
fn integrals_to_nodes(density: &(impl Field + ?Sized), from: Point, disc: &Discretization) -> Vec<f64> {
    let axis = disc.table_axis();
    let half = 0.5 * disc.extent;
    table_nodes(&axis).map(|x| line_integral(density, from, x, disc.fine_step(), half)).collect()
}

/// Attenuation exponents at the table nodes of tuple `(s, d)`, split into
/// their incoming and outgoing line integrals.
struct PathIntegrals {
    incoming: Vec<f64>,
    outgoing: Vec<f64>,
}

fn path_integrals(density: &(impl Field + ?Sized), setup: &ForwardSetup, source_tables: &[Vec<f64>], k: usize) -> PathIntegrals {
    let (_, d) = setup.geometry.tuple(k);
    PathIntegrals {
        incoming: source_tables[k / setup.geometry.n_d].clone(),
        outgoing: integrals_to_nodes(density, d, &setup.disc),
    }
}

fn source_integrals(density: &(impl Field + Sync + ?Sized), setup: &ForwardSetup) -> Vec<Vec<f64>> {
    setup.geometry.sources.par_iter().map(|&s| integrals_to_nodes(density, s, &setup.disc)).collect()
}

/// Weight table of tuple `k` from its path integrals.
fn weight_table(setup: &ForwardSetup, k: usize, paths: &PathIntegrals, water_density: f64) -> WeightTable {
    let (s, d) = setup.geometry.tuple(k);
    let e0 = setup.grid.e0;
    let sigma0 = klein_nishina_total(e0);
    let axis = setup.disc.table_axis();
    let values = table_nodes(&axis)
        .enumerate()
        .map(|(i, x)| {
            let e = scattered_energy(x, d, s, e0);
            let exponent = water_density * (sigma0 * paths.incoming[i] + klein_nishina_total(e) * paths.outgoing[i]);
            let (rs, rd) = (x.dist(s), x.dist(d));
            (-exponent).exp() / (rs * rs * rd * rd)
        })
        .collect();
    WeightTable { axis, values }
}

/// Derivative of the weight table in direction `dir` (path integrals of the
/// direction field): `-(X dir) * W1`.
fn weight_table_derivative(setup: &ForwardSetup, k: usize, table: &WeightTable, dir: &PathIntegrals, water_density: f64) -> WeightTable {
    let (s, d) = setup.geometry.tuple(k);
    let e0 = setup.grid.e0;
    let sigma0 = klein_nishina_total(e0);
    let values = table_nodes(&table.axis)
        .enumerate()
        .map(|(i, x)| {
            let e = scattered_energy(x, d, s, e0);
            let dexp = water_density * (sigma0 * dir.incoming[i] + klein_nishina_total(e) * dir.outgoing[i]);
            -dexp * table.values[i]
        })
        .collect();
    WeightTable { axis: table.axis, values }
}

/// Tensor trapezoid nodes and weights over the domain.
struct QuadratureSet {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl QuadratureSet {
    fn new(disc: &Discretization) -> Self {
        let axis = disc.quadrature_axis();
        let n = axis.nodes();
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push(Point::new(axis.coord(i), axis.coord(j)));
                weights.push(axis.weight(i) * axis.weight(j));
            }
        }
        QuadratureSet { points, weights }
    }

    fn sample(&self, f: &(impl Field + ?Sized)) -> Vec<f64> {
        self.points.iter().map(|&p| f.value(p)).collect()
    }
}

/// Visit every quadrature point of tuple `k` whose scattered energy falls in
/// an energy bin, with its weighted kernel value `w * W1(x)`.
#[inline]
fn for_each_contribution(
    setup: &ForwardSetup,
    k: usize,
    table: &WeightTable,
    quad: &QuadratureSet,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let (s, d) = setup.geometry.tuple(k);
    let e0 = setup.grid.e0;
    for (i, &x) in quad.points.iter().enumerate() {
        let Some(c) = scatter_cos(x, d, s) else { continue };
        let Some(p) = setup.grid.bin_of(compton_energy_unchecked(e0, c)) else { continue };
        visit(i, p, quad.weights[i] * table.interp(x));
    }
}

/// Bin-integrated spectrum of `values` (sampled at the quadrature points)
/// against the per-tuple weight tables.
fn integrate_spectrum(setup: &ForwardSetup, quad: &QuadratureSet, tables: &[WeightTable], values: &[f64]) -> Spectrum {
    let p_count = setup.grid.len();
    let k_count = setup.geometry.tuple_count();
    let columns: Vec<Vec<f64>> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let mut col = vec![0.0; p_count];
            for_each_contribution(setup, k, &tables[k], quad, |i, p, w| col[p] += w * values[i]);
            col
        })
        .collect();
    let mut out = Spectrum::zeros(p_count, k_count);
    for (k, col) in columns.iter().enumerate() {
        for (p, v) in col.iter().enumerate() {
            out.values[p * k_count + k] = *v;
        }
    }
    out
}

/// The linear operator for a fixed attenuation map, with its weight tables
/// and quadrature precomputed.
pub struct FirstOrderOperator<'a> {
    setup: ForwardSetup<'a>,
    tables: Vec<WeightTable>,
    quad: QuadratureSet,
}

impl<'a> FirstOrderOperator<'a> {
    pub fn new(mu: &AttenuationModel, setup: ForwardSetup<'a>) -> Self {
        let density = mu.density;
        let sources = source_integrals(density, &setup);
        let tables = (0..setup.geometry.tuple_count())
            .into_par_iter()
            .map(|k| weight_table(&setup, k, &path_integrals(density, &setup, &sources, k), mu.water_density))
            .collect();
        FirstOrderOperator { setup, tables, quad: QuadratureSet::new(&setup.disc) }
    }

    pub fn setup(&self) -> &ForwardSetup<'a> {
        &self.setup
    }

    pub fn tables(&self) -> &[WeightTable] {
        &self.tables
    }

    pub fn apply(&self, f: &(impl Field + ?Sized)) -> Spectrum {
        let values = self.quad.sample(f);
        integrate_spectrum(&self.setup, &self.quad, &self.tables, &values)
    }

    /// Column `nm` is the spectrum of basis function `e_nm`.
    pub fn assemble(&self, basis: &GaussianBasis, attenuation: &str) -> Result<ForwardMatrix> {
        if (basis.extent - self.setup.disc.extent).abs() > 1e-12 * basis.extent {
            return Err(invalid("basis and discretization cover different domains"));
        }
        let p_count = self.setup.grid.len();
        let k_count = self.setup.geometry.tuple_count();
        let dim = basis.dim();

        // compressed basis values at the quadrature points
        let mut start = Vec::with_capacity(self.quad.points.len() + 1);
        let mut index: Vec<u32> = Vec::new();
        let mut value: Vec<f64> = Vec::new();
        start.push(0);
        for &x in &self.quad.points {
            for (i, v) in basis.support(x).iter() {
                index.push(i as u32);
                value.push(v);
            }
            start.push(index.len());
        }

        let mut matrix = DenseMatrix::zeros(p_count * k_count, dim);
        let ks: Vec<usize> = (0..k_count).collect();
        for batch in ks.chunks(ASSEMBLY_BATCH) {
            let blocks: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&k| {
                    let mut block = vec![0.0; p_count * dim];
                    for_each_contribution(&self.setup, k, &self.tables[k], &self.quad, |i, p, w| {
                        let row = &mut block[p * dim..(p + 1) * dim];
                        for e in start[i]..start[i + 1] {
                            row[index[e] as usize] += w * value[e];
                        }
                    });
                    block
                })
                .collect();
            for (&k, block) in batch.iter().zip(&blocks) {
                for p in 0..p_count {
                    let r = p * k_count + k;
                    matrix.data[r * dim..(r + 1) * dim].copy_from_slice(&block[p * dim..(p + 1) * dim]);
                }
            }
        }
        Ok(ForwardMatrix { matrix, p: p_count, k: k_count, attenuation: attenuation.to_string() })
    }
}

/// Spectrum of `f` under the linear operator with attenuation `mu`.
pub fn apply_l1(mu: &AttenuationModel, f: &(impl Field + ?Sized), setup: ForwardSetup) -> Spectrum {
    FirstOrderOperator::new(mu, setup).apply(f)
}

pub fn assemble_matrix(mu: &AttenuationModel, basis: &GaussianBasis, setup: ForwardSetup, attenuation: &str) -> Result<ForwardMatrix> {
    FirstOrderOperator::new(mu, setup).assemble(basis, attenuation)
}

fn density_raster(f: &CoefficientImage, disc: &Discretization) -> Result<Raster> {
    let raster = disc.fine_raster(f);
    let scale = raster.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if raster.min() < -1e-12 * scale.max(1.0) {
        return Err(invalid(format!("density must be nonnegative, found {}", raster.min())));
    }
    Ok(raster)
}

fn check_basis(f: &CoefficientImage, setup: &ForwardSetup) -> Result<()> {
    if f.basis.n != setup.disc.n || (f.basis.extent - setup.disc.extent).abs() > 1e-12 * f.basis.extent {
        return Err(CstError::ShapeMismatch("coefficient basis does not match the discretization".into()));
    }
    Ok(())
}

/// The self-attenuating operator: weights computed from the density `f`.
pub fn apply_nonlinear_l1(f: &CoefficientImage, setup: ForwardSetup) -> Result<Spectrum> {
    check_basis(f, &setup)?;
    let raster = density_raster(f, &setup.disc)?;
    let mu = AttenuationModel::new(&raster, WATER_ELECTRON_DENSITY, &setup.disc);
    Ok(FirstOrderOperator::new(&mu, setup).apply(f))
}

/// Frechet derivative of [`apply_nonlinear_l1`] at `f` in direction `h`.
pub fn frechet_l1(f: &CoefficientImage, h: &CoefficientImage, setup: ForwardSetup) -> Result<Spectrum> {
    check_basis(f, &setup)?;
    check_basis(h, &setup)?;
    let raster_f = density_raster(f, &setup.disc)?;
    let raster_h = setup.disc.fine_raster(h);
    let quad = QuadratureSet::new(&setup.disc);
    let src_f = source_integrals(&raster_f, &setup);
    let src_h = source_integrals(&raster_h, &setup);
    let (tables, dtables): (Vec<WeightTable>, Vec<WeightTable>) = (0..setup.geometry.tuple_count())
        .into_par_iter()
        .map(|k| {
            let table = weight_table(&setup, k, &path_integrals(&raster_f, &setup, &src_f, k), WATER_ELECTRON_DENSITY);
            let dir = path_integrals(&raster_h, &setup, &src_h, k);
            let dtable = weight_table_derivative(&setup, k, &table, &dir, WATER_ELECTRON_DENSITY);
            (table, dtable)
        })
        .unzip();
    let direct = integrate_spectrum(&setup, &quad, &tables, &quad.sample(h));
    let through_weight = integrate_spectrum(&setup, &quad, &dtables, &quad.sample(f));
    direct.add(&through_weight)
}

/// `|F(f+h) - F(f) - F'(f) h| / |F(f+h) - F(f)|`.
pub fn tangential_cone_ratio(f: &CoefficientImage, h: &CoefficientImage, setup: ForwardSetup) -> Result<f64> {
    let shifted: Vec<f64> = f.coefficients.iter().zip(&h.coefficients).map(|(a, b)| a + b).collect();
    let shifted = CoefficientImage::new(f.basis, shifted)?;
    let base = apply_nonlinear_l1(f, setup)?;
    let change = apply_nonlinear_l1(&shifted, setup)?.sub(&base)?;
    let denominator = change.norm();
    if denominator == 0.0 {
        return Err(CstError::UndefinedRatio);
    }
    let linear = frechet_l1(f, h, setup)?;
    Ok(change.sub(&linear)?.norm() / denominator)
}

/// Forward difference along energy for every tuple: `(P-1) x K` output.
pub fn apply_p_operator(spec: &Spectrum) -> Result<Spectrum> {
    if spec.p < 2 {
        return Err(invalid(format!("energy differences need P >= 2, got {}", spec.p)));
    }
    let k = spec.k;
    let values = (0..(spec.p - 1) * k).map(|r| spec.values[r + k] - spec.values[r]).collect();
    Spectrum::new(spec.p - 1, k, values)
}

/// The same differences applied to the rows of a forward matrix.
pub fn p_operator_matrix(m: &ForwardMatrix) -> Result<ForwardMatrix> {
    if m.p < 2 {
        return Err(invalid(format!("energy differences need P >= 2, got {}", m.p)));
    }
    let cols = m.matrix.cols;
    let rows = (m.p - 1) * m.k;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend(m.matrix.row(r + m.k).iter().zip(m.matrix.row(r)).map(|(a, b)| a - b));
    }
    Ok(ForwardMatrix {
        matrix: DenseMatrix::new(rows, cols, data)?,
        p: m.p - 1,
        k: m.k,
        attenuation: m.attenuation.clone(),
    })
}
