//! Ellipse phantoms and their fine-grid rasters.

use crate::error::{invalid, Result};
use crate::field::Field;
use crate::geometry::Point;

/// Electron density of water in electrons per cm^3.
pub const WATER_ELECTRON_DENSITY: f64 = 3.23e23;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: Point,
    pub semi_axes: (f64, f64),
    /// Rotation of the first semi-axis from the x-axis, radians.
    pub angle: f64,
    pub additive_value: f64,
}

impl Ellipse {
    pub fn contains(&self, p: Point) -> bool {
        let d = p - self.center;
        let (sin, cos) = self.angle.sin_cos();
        let u = d.x * cos + d.y * sin;
        let v = -d.x * sin + d.y * cos;
        let (a, b) = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

/// Values on a regular square grid with bilinear interpolation.
///
/// Node `(i, j)` sits at `(origin + i * step, origin + j * step)`; `values`
/// is row-major with `j` (the y index) outermost. Outside the node hull the
/// field ramps linearly to zero over one cell and vanishes beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub n: usize,
    pub origin: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn zeros(n: usize, origin: f64, step: f64) -> Self {
        Raster { n, origin, step, values: vec![0.0; n * n] }
    }

    /// Sample `field` at every node.
    pub fn sample(n: usize, origin: f64, step: f64, field: &(impl Field + ?Sized)) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(field.value(Point::new(origin + i as f64 * step, origin + j as f64 * step)));
            }
        }
        Raster { n, origin, step, values }
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        Point::new(self.origin + i as f64 * self.step, self.origin + j as f64 * self.step)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    #[inline]
    fn at_or_zero(&self, i: isize, j: isize) -> f64 {
        let n = self.n as isize;
        if i < 0 || j < 0 || i >= n || j >= n {
            0.0
        } else {
            self.values[j as usize * self.n + i as usize]
        }
    }

    #[inline]
    pub fn bilinear(&self, p: Point) -> f64 {
        let fx = (p.x - self.origin) / self.step;
        let fy = (p.y - self.origin) / self.step;
        let limit = self.n as f64;
        if !(fx > -1.0 && fy > -1.0 && fx < limit && fy < limit) {
            return 0.0;
        }
        let i = fx.floor();
        let j = fy.floor();
        let tx = fx - i;
        let ty = fy - j;
        let (i, j) = (i as isize, j as isize);
        let v00 = self.at_or_zero(i, j);
        let v10 = self.at_or_zero(i + 1, j);
        let v01 = self.at_or_zero(i, j + 1);
        let v11 = self.at_or_zero(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest difference between horizontally or vertically adjacent nodes,
    /// including the implicit zero ring around the grid.
    pub fn max_adjacent_difference(&self) -> f64 {
        let n = self.n as isize;
        let mut best = 0.0f64;
        for j in -1..n {
            for i in -1..n {
                let v = self.at_or_zero(i, j);
                best = best.max((v - self.at_or_zero(i + 1, j)).abs());
                best = best.max((v - self.at_or_zero(i, j + 1)).abs());
            }
        }
        best
    }
}

impl Field for Raster {
    fn value(&self, p: Point) -> f64 {
        self.bilinear(p)
    }
}

/// Ellipse-defined density map together with its raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
    pub raster: Raster,
    /// Side length of the square domain centred at the origin, cm.
    pub extent: f64,
    pub water_density: f64,
}

impl Phantom {
    pub fn from_ellipses(ellipses: Vec<Ellipse>, extent: f64, raster_n: usize) -> Result<Self> {
        if raster_n < 2 || !(extent > 0.0) {
            return Err(invalid("raster needs at least 2 nodes and a positive extent"));
        }
        for e in &ellipses {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return Err(invalid("ellipse semi-axes must be positive"));
            }
        }
        let step = extent / raster_n as f64;
        let origin = -0.5 * extent;
        let exact = EllipseSum(&ellipses);
        let raster = Raster::sample(raster_n, origin, step, &exact);
        Ok(Phantom { ellipses, raster, extent, water_density: WATER_ELECTRON_DENSITY })
    }

    /// Sum of additive values of all ellipses containing `p`.
    pub fn exact_value(&self, p: Point) -> f64 {
        EllipseSum(&self.ellipses).value(p)
    }
}

impl Field for Phantom {
    fn value(&self, p: Point) -> f64 {
        eval_bilinear(self, p)
    }
}

struct EllipseSum<'a>(&'a [Ellipse]);

impl Field for EllipseSum<'_> {
    fn value(&self, p: Point) -> f64 {
        self.0.iter().filter(|e| e.contains(p)).map(|e| e.additive_value).sum()
    }
}

/// Bilinear interpolation of the phantom raster; zero outside the extent.
pub fn eval_bilinear(phantom: &Phantom, p: Point) -> f64 {
    let half = 0.5 * phantom.extent;
    if p.x.abs() > half || p.y.abs() > half {
        return 0.0;
    }
    phantom.raster.bilinear(p)
}

/// Horizontal and vertical diameters of the head outline, cm.
pub const HEAD_DIAMETERS: (f64, f64) = (19.5, 26.0);
/// Target range of nonzero relative densities.
pub const DENSITY_RANGE: (f64, f64) = (1.36, 5.66);
/// Default multiplier on the inner-feature contrast of the classic table.
pub const DEFAULT_CONTRAST: f64 = 5.0;

// Classic Shepp-Logan table in unit coordinates:
// (value, semi-axis a, semi-axis b, x0, y0, angle in degrees).
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
];

/// Ten-ellipse Shepp-Logan layout scaled to 19.5 x 26 cm.
///
/// The inner features (ellipses 3-10) have their additive values multiplied
/// by `contrast_scale`; the composite map is then mapped affinely so that its
/// nonzero values span [1.36, 5.66]. The affine offset lands on the outer
/// ellipse, which keeps the background at zero.
pub fn build_shepp_logan(contrast_scale: f64, extent: f64, raster_n: usize) -> Result<Phantom> {
    if !(contrast_scale > 0.0) {
        return Err(invalid(format!("contrast scale must be positive, got {contrast_scale}")));
    }
    let scale = HEAD_DIAMETERS.0 / (2.0 * SHEPP_LOGAN[0].1);
    debug_assert!((HEAD_DIAMETERS.1 / (2.0 * SHEPP_LOGAN[0].2) - scale).abs() < 1e-12);

    let mut ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .enumerate()
        .map(|(i, &(v, a, b, x0, y0, deg))| Ellipse {
            center: Point::new(x0 * scale, y0 * scale),
            semi_axes: (a * scale, b * scale),
            angle: deg.to_radians(),
            additive_value: if i >= 2 { v * contrast_scale } else { v },
        })
        .collect();

    let (lo, hi) = composite_range(&ellipses);
    let gain = (DENSITY_RANGE.1 - DENSITY_RANGE.0) / (hi - lo);
    let offset = DENSITY_RANGE.0 - gain * lo;
    for (i, e) in ellipses.iter_mut().enumerate() {
        e.additive_value *= gain;
        if i == 0 {
            e.additive_value += offset;
        }
    }
    Phantom::from_ellipses(ellipses, extent, raster_n)
}

/// Min and max of the composite value over all regions inside the outer
/// ellipse. Each region is an intersection pattern of ellipses; every
/// pattern is reached by some point on a fine sampling of the head.
fn composite_range(ellipses: &[Ellipse]) -> (f64, f64) {
    let outer = ellipses[0];
    let (a, b) = outer.semi_axes;
    let samples = 1000;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=samples {
        for i in 0..=samples {
            let p = Point::new(
                outer.center.x - a + 2.0 * a * i as f64 / samples as f64,
                outer.center.y - b + 2.0 * b * j as f64 / samples as f64,
            );
            if !outer.contains(p) {
                continue;
            }
            let v = EllipseSum(ellipses).value(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Prior map: outline of `phantom` (outer two ellipses) with a constant
/// interior.
pub fn build_prior(phantom: &Phantom, interior_value: f64) -> Result<Phantom> {
    if !(interior_value >= 0.0) {
        return Err(invalid(format!("interior value must be nonnegative, got {interior_value}")));
    }
    if phantom.ellipses.len() < 2 {
        return Err(invalid("prior needs an outer and an inner outline ellipse"));
    }
    let skull = phantom.ellipses[0];
    let mut inner = phantom.ellipses[1];
    inner.additive_value = interior_value - skull.additive_value;
    let mut prior = Phantom::from_ellipses(vec![skull, inner], phantom.extent, phantom.raster.n)?;
    prior.water_density = phantom.water_density;
    Ok(prior)
}
