//! Scanner layout and Compton kinematics.
//!
//! Sources sit on one half of a circle centred at the origin; every source
//! sees `n_d` detectors spread over `arc_fraction` of the same circle, with
//! the omitted sector centred on the source itself.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{invalid, CstError, Result};

/// Rest energy of the electron in keV.
pub const ELECTRON_REST_ENERGY: f64 = 511.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Point::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Source and detector placement of a 2D fan-beam Compton scanner.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    pub radius: f64,
    pub n_s: usize,
    pub n_d: usize,
    pub arc_fraction: f64,
    pub sources: Vec<Point>,
    /// `detectors[i]` holds the `n_d` detectors used with source `i`.
    pub detectors: Vec<Vec<Point>>,
    source_angles: Vec<f64>,
}

impl ScanGeometry {
    /// Number of source-detector tuples `K = n_s * n_d`.
    pub fn tuple_count(&self) -> usize {
        self.n_s * self.n_d
    }

    /// Tuple index `k = source * n_d + detector`.
    pub fn tuple(&self, k: usize) -> (Point, Point) {
        let (i, j) = (k / self.n_d, k % self.n_d);
        (self.sources[i], self.detectors[i][j])
    }

    pub fn source_angle(&self, source: usize) -> f64 {
        self.source_angles[source]
    }

    /// Angular width of one detector cell along the circle.
    pub fn detector_spacing(&self) -> f64 {
        2.0 * PI * self.arc_fraction / self.n_d as f64
    }

    /// Angle of detector `j` of source `i`, measured from the positive x-axis.
    pub fn detector_angle(&self, source: usize, j: usize) -> f64 {
        let start = self.source_angles[source] + PI * (1.0 - self.arc_fraction);
        start + (j as f64 + 0.5) * self.detector_spacing()
    }

    /// Detector of source `source` whose angular window contains the circle
    /// point at `angle`. Windows are half a spacing wide on each side, so
    /// the sampled arc is covered without gaps or overlap.
    pub fn detector_at_angle(&self, source: usize, angle: f64) -> Option<usize> {
        let start = self.source_angles[source] + PI * (1.0 - self.arc_fraction);
        let offset = (angle - start).rem_euclid(2.0 * PI);
        let cell = offset / self.detector_spacing();
        if cell < self.n_d as f64 {
            Some(cell as usize)
        } else {
            None
        }
    }
}

pub fn build_geometry(radius: f64, n_s: usize, n_d: usize, arc_fraction: f64) -> Result<ScanGeometry> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    if n_s == 0 || n_d == 0 {
        return Err(invalid("source and detector counts must be at least 1"));
    }
    if !(arc_fraction > 0.0 && arc_fraction <= 1.0) {
        return Err(invalid(format!("arc_fraction must lie in (0, 1], got {arc_fraction}")));
    }

    let source_angles: Vec<f64> = (0..n_s).map(|i| PI * (i as f64 + 0.5) / n_s as f64).collect();
    let mut geometry = ScanGeometry {
        radius,
        n_s,
        n_d,
        arc_fraction,
        sources: source_angles.iter().map(|&a| Point::from_polar(radius, a)).collect(),
        detectors: Vec::with_capacity(n_s),
        source_angles,
    };
    for i in 0..n_s {
        let ring = (0..n_d)
            .map(|j| Point::from_polar(radius, geometry.detector_angle(i, j)))
            .collect();
        geometry.detectors.push(ring);
    }
    Ok(geometry)
}

/// Energy after Compton scattering through `omega` radians.
pub fn compton_energy(e0: f64, omega: f64) -> Result<f64> {
    if !(e0 > 0.0) {
        return Err(invalid(format!("E0 must be positive, got {e0}")));
    }
    if !(0.0..=PI).contains(&omega) {
        return Err(invalid(format!("scattering angle {omega} outside [0, pi]")));
    }
    Ok(compton_energy_unchecked(e0, omega.cos()))
}

#[inline]
pub(crate) fn compton_energy_unchecked(e0: f64, cos_omega: f64) -> f64 {
    e0 / (1.0 + (e0 / ELECTRON_REST_ENERGY) * (1.0 - cos_omega))
}

/// Scattering angle that produces energy `e` from `e0`; inverse of [`compton_energy`].
pub fn compton_angle(e0: f64, e: f64) -> Result<f64> {
    let cos = 1.0 - ELECTRON_REST_ENERGY * (1.0 / e - 1.0 / e0);
    if !(-1.0..=1.0).contains(&cos) {
        return Err(invalid(format!("energy {e} unreachable from {e0} by a single scatter")));
    }
    Ok(cos.acos())
}

/// `kappa` is the cosine of the angle at `s` between `x` and `d`;
/// `rho` the ratio of distances `|x - s| / |d - s|`.
pub fn kappa_rho(x: Point, d: Point, s: Point) -> Result<(f64, f64)> {
    let xs = x - s;
    let ds = d - s;
    let (nx, nd) = (xs.norm(), ds.norm());
    if nx == 0.0 {
        return Err(CstError::SingularPoint("x coincides with the source".into()));
    }
    if nd == 0.0 {
        return Err(CstError::SingularPoint("detector coincides with the source".into()));
    }
    let kappa = (xs.dot(ds) / (nx * nd)).clamp(-1.0, 1.0);
    Ok((kappa, nx / nd))
}

/// Cosine of the scattering angle between the incoming direction `x - s`
/// and the outgoing direction `d - x`, computed from the kappa/rho level-set
/// form. `None` when `x` lies on the line through `s` and `d`.
#[inline]
pub(crate) fn scatter_cos(x: Point, d: Point, s: Point) -> Option<f64> {
    let xs = x - s;
    let ds = d - s;
    let nx = xs.norm();
    let nd = ds.norm();
    if nx == 0.0 || nd == 0.0 {
        return None;
    }
    let kappa = xs.dot(ds) / (nx * nd);
    let rho = nx / nd;
    let sin = xs.cross(ds).abs() / (nx * nd);
    if sin <= 1e-15 {
        return None;
    }
    // cot(omega) = (kappa - rho) / sin  =>  cos(omega) = c / sqrt(1 + c^2)
    let c = (kappa - rho) / sin;
    Some(c / (1.0 + c * c).sqrt())
}

/// Energy a photon scattered once at `x` carries when it reaches `d`.
pub fn scatter_phase(x: Point, d: Point, s: Point, e0: f64) -> Result<f64> {
    let (kappa, rho) = kappa_rho(x, d, s)?;
    if x == d {
        return Err(CstError::SingularPoint("x coincides with the detector".into()));
    }
    // sqrt(1 - kappa^2) through the cross product, exact near the chord
    let sin = (x - s).cross(d - s).abs() / ((x - s).norm() * (d - s).norm());
    if sin == 0.0 {
        return Err(CstError::SingularConfiguration);
    }
    // arccot with range (0, pi)
    let omega = PI / 2.0 - ((kappa - rho) / sin).atan();
    compton_energy(e0, omega)
}

/// Angle between `x - s` and `d - x`, by direct vector geometry.
pub fn scattering_angle(x: Point, d: Point, s: Point) -> f64 {
    let a = x - s;
    let b = d - x;
    a.cross(b).abs().atan2(a.dot(b))
}

/// Energy sampling of the detector: `P` bin centres and their edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    pub e0: f64,
    pub mc2: f64,
    pub energies: Vec<f64>,
    pub bin_edges: Vec<f64>,
}

impl EnergyGrid {
    /// Centres equally spaced over `[lo, hi]` inclusive; edges at midpoints,
    /// outer edges half a step beyond the first and last centre.
    pub fn new(e0: f64, p: usize, lo: f64, hi: f64) -> Result<Self> {
        if p == 0 {
            return Err(invalid("energy grid needs at least one bin"));
        }
        if !(lo < hi) || !(hi < e0) || !(e0 > 0.0) {
            return Err(invalid(format!("energy interval [{lo}, {hi}] invalid for E0 = {e0}")));
        }
        let backscatter_limit = compton_energy_unchecked(e0, 0.0);
        if lo <= backscatter_limit {
            return Err(invalid(format!(
                "lowest energy {lo} must exceed E(pi/2) = {backscatter_limit}"
            )));
        }
        let step = if p == 1 { hi - lo } else { (hi - lo) / (p - 1) as f64 };
        let energies: Vec<f64> = if p == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..p).map(|i| lo + step * i as f64).collect()
        };
        let mut bin_edges = Vec::with_capacity(p + 1);
        bin_edges.push(energies[0] - 0.5 * step);
        for w in energies.windows(2) {
            bin_edges.push(0.5 * (w[0] + w[1]));
        }
        bin_edges.push(energies[p - 1] + 0.5 * step);
        Ok(EnergyGrid { e0, mc2: ELECTRON_REST_ENERGY, energies, bin_edges })
    }

    /// Default interval (359.6, 1161.5) keV for a 1173 keV source.
    pub fn standard(e0: f64, p: usize) -> Result<Self> {
        EnergyGrid::new(e0, p, 359.6, 1161.5)
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Index of the bin containing `e`; bins are half-open `[lo, hi)`.
    #[inline]
    pub fn bin_of(&self, e: f64) -> Option<usize> {
        let edges = &self.bin_edges;
        if !(e >= edges[0] && e < edges[edges.len() - 1]) {
            return None;
        }
        // equally spaced edges: direct index, then correct for rounding
        let step = (edges[edges.len() - 1] - edges[0]) / (edges.len() - 1) as f64;
        let mut i = (((e - edges[0]) / step) as usize).min(edges.len() - 2);
        while i > 0 && e < edges[i] {
            i -= 1;
        }
        while i + 1 < edges.len() - 1 && e >= edges[i + 1] {
            i += 1;
        }
        Some(i)
    }
}
