//! Analog photon transport in the scanner plane: Woodcock tracking through
//! the phantom raster, Klein-Nishina scattering, and tallies of once- and
//! twice-scattered photons per detector and energy bin.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{invalid, CstError, Result};
use crate::forward::{klein_nishina_total, Spectrum};
use crate::geometry::{compton_energy_unchecked, EnergyGrid, Point, ScanGeometry};
use crate::phantom::{eval_bilinear, Phantom};

/// Photons per RNG stream. Part of the reproducibility contract: changing it
/// changes the sampled histories.
pub const CHUNK_PHOTONS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub photons_per_source: u64,
    pub max_orders: u8,
    pub rng_seed: u64,
    /// Angular acceptance on each side of a detector centre, radians.
    pub detector_half_width: f64,
    /// Tracking majorant at the lowest reachable energy, 1/cm. Lower
    /// energies are never tracked, so scaling it by `sigma(E) / sigma(E_min)`
    /// still bounds the attenuation at every energy.
    pub majorant: f64,
    /// Photons per source whose full history is recorded.
    pub log_histories: usize,
}

impl McConfig {
    /// Windows of half the detector spacing and the smallest valid majorant.
    pub fn for_phantom(phantom: &Phantom, geometry: &ScanGeometry, e0: f64, photons_per_source: u64, rng_seed: u64) -> Self {
        let max_orders = 2;
        McConfig {
            photons_per_source,
            max_orders,
            rng_seed,
            detector_half_width: 0.5 * geometry.detector_spacing(),
            majorant: required_majorant(phantom, e0, max_orders),
            log_histories: 0,
        }
    }
}

/// Lowest energy a photon can carry while it is still tracked: after
/// `max_orders` backscatters.
fn lowest_energy(e0: f64, max_orders: u8) -> f64 {
    (0..max_orders).fold(e0, |e, _| compton_energy_unchecked(e, -1.0))
}

fn required_majorant(phantom: &Phantom, e0: f64, max_orders: u8) -> f64 {
    phantom.water_density * phantom.raster.max().max(0.0) * klein_nishina_total(lowest_energy(e0, max_orders))
}

/// One recorded photon: collision points with the energy after each.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonHistory {
    pub source: usize,
    pub collisions: Vec<(Point, f64)>,
    /// Where the photon crossed the scanner circle, if it escaped.
    pub exit: Option<Point>,
    /// `(order, tuple, bin)` when the photon was tallied.
    pub tally: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McTally {
    pub g1: Spectrum,
    pub g2: Spectrum,
    pub emitted: Vec<u64>,
    pub histories: Vec<PhotonHistory>,
}

struct Transport<'a> {
    phantom: &'a Phantom,
    geometry: &'a ScanGeometry,
    grid: &'a EnergyGrid,
    config: &'a McConfig,
    half: f64,
    sigma_floor: f64,
}

/// Counts of one chunk, indexed `[order - 1][p * K + k]`.
struct ChunkTally {
    counts: [Vec<u64>; 2],
    histories: Vec<PhotonHistory>,
}

pub fn simulate(phantom: &Phantom, geometry: &ScanGeometry, grid: &EnergyGrid, config: &McConfig) -> Result<McTally> {
    if config.photons_per_source == 0 {
        return Err(invalid("at least one photon per source is required"));
    }
    if !(1..=2).contains(&config.max_orders) {
        return Err(invalid(format!("max_orders must be 1 or 2, got {}", config.max_orders)));
    }
    if !(config.detector_half_width > 0.0) {
        return Err(invalid("detector half width must be positive"));
    }
    if phantom.raster.min() < 0.0 {
        return Err(invalid("phantom densities must be nonnegative"));
    }
    let required = required_majorant(phantom, grid.e0, config.max_orders);
    if config.majorant < required {
        return Err(CstError::BiasedTracking { majorant: config.majorant, required });
    }
    let transport = Transport {
        phantom,
        geometry,
        grid,
        config,
        half: 0.5 * phantom.extent,
        sigma_floor: klein_nishina_total(lowest_energy(grid.e0, config.max_orders)),
    };

    let chunks_per_source = config.photons_per_source.div_ceil(CHUNK_PHOTONS);
    let jobs: Vec<(usize, u64)> =
        (0..geometry.n_s).flat_map(|s| (0..chunks_per_source).map(move |c| (s, c))).collect();
    let partials: Vec<ChunkTally> = jobs.par_iter().map(|&(s, c)| transport.run_chunk(s, c)).collect();

    let size = grid.len() * geometry.tuple_count();
    let mut counts = [vec![0u64; size], vec![0u64; size]];
    let mut histories = Vec::new();
    for part in partials {
        for order in 0..2 {
            for (a, b) in counts[order].iter_mut().zip(&part.counts[order]) {
                *a += b;
            }
        }
        histories.extend(part.histories);
    }
    let to_spectrum = |c: &[u64]| Spectrum {
        p: grid.len(),
        k: geometry.tuple_count(),
        values: c.iter().map(|&v| v as f64).collect(),
    };
    Ok(McTally {
        g1: to_spectrum(&counts[0]),
        g2: to_spectrum(&counts[1]),
        emitted: vec![config.photons_per_source; geometry.n_s],
        histories,
    })
}

impl Transport<'_> {
    fn run_chunk(&self, source: usize, chunk: u64) -> ChunkTally {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(((source as u64) << 32) | chunk);
        let size = self.grid.len() * self.geometry.tuple_count();
        let mut tally = ChunkTally { counts: [vec![0; size], vec![0; size]], histories: Vec::new() };
        let first = chunk * CHUNK_PHOTONS;
        let last = (first + CHUNK_PHOTONS).min(self.config.photons_per_source);
        let (lo, hi) = self.fan(source);
        for index in first..last {
            let record = (index as usize) < self.config.log_histories;
            let angle = rng.gen_range(lo..hi);
            let history = self.track(source, angle, &mut rng, record, &mut tally.counts);
            if let Some(h) = history {
                tally.histories.push(h);
            }
        }
        tally
    }

    /// Emission angles of the fan that just covers the domain square.
    fn fan(&self, source: usize) -> (f64, f64) {
        let s = self.geometry.sources[source];
        let centre = (Point::new(0.0, 0.0) - s).angle();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let corner = Point::new(x * self.half, y * self.half);
            let rel = ((corner - s).angle() - centre + PI).rem_euclid(2.0 * PI) - PI;
            lo = lo.min(rel);
            hi = hi.max(rel);
        }
        (centre + lo, centre + hi)
    }

    fn majorant(&self, e: f64) -> f64 {
        self.config.majorant * klein_nishina_total(e) / self.sigma_floor
    }

    /// Follow one photon until it escapes or is killed. Returns its history
    /// when `record` is set.
    fn track(
        &self,
        source: usize,
        angle: f64,
        rng: &mut ChaCha8Rng,
        record: bool,
        counts: &mut [Vec<u64>; 2],
    ) -> Option<PhotonHistory> {
        let mut x = self.geometry.sources[source];
        let mut u = Point::from_polar(1.0, angle);
        let mut e = self.grid.e0;
        let mut order = 0usize;
        let mut history = record.then(|| PhotonHistory { source, collisions: Vec::new(), exit: None, tally: None });

        loop {
            match self.next_collision(x, u, e, rng) {
                Some(p) => {
                    order += 1;
                    if order > self.config.max_orders as usize {
                        return history;
                    }
                    let (cos, side) = sample_klein_nishina(e, rng);
                    e = compton_energy_unchecked(e, cos);
                    let sin = (1.0 - cos * cos).max(0.0).sqrt() * side;
                    u = Point::new(u.x * cos - u.y * sin, u.x * sin + u.y * cos);
                    x = p;
                    if let Some(h) = history.as_mut() {
                        h.collisions.push((x, e));
                    }
                }
                None => {
                    let exit = exit_point(x, u, self.geometry.radius);
                    if let Some(h) = history.as_mut() {
                        h.exit = Some(exit);
                    }
                    if order == 0 {
                        return history;
                    }
                    if let Some((k, bin)) = self.detect(source, exit, e) {
                        counts[order - 1][bin * self.geometry.tuple_count() + k] += 1;
                        if let Some(h) = history.as_mut() {
                            h.tally = Some((order, k, bin));
                        }
                    }
                    return history;
                }
            }
        }
    }

    /// Woodcock tracking along the ray through the domain square; `None`
    /// when the photon leaves the square without a real collision.
    fn next_collision(&self, x: Point, u: Point, e: f64, rng: &mut ChaCha8Rng) -> Option<Point> {
        let (t_in, t_out) = ray_box(x, u, self.half)?;
        let majorant = self.majorant(e);
        if majorant <= 0.0 {
            return None;
        }
        let sigma = klein_nishina_total(e) * self.phantom.water_density;
        let mut t = t_in.max(0.0);
        loop {
            let step: f64 = rng.sample(Exp1);
            t += step / majorant;
            if t >= t_out {
                return None;
            }
            let p = x + u * t;
            let mu = sigma * eval_bilinear(self.phantom, p);
            if rng.gen::<f64>() * majorant < mu {
                return Some(p);
            }
        }
    }

    fn detect(&self, source: usize, exit: Point, e: f64) -> Option<(usize, usize)> {
        let angle = exit.angle();
        let j = self.geometry.detector_at_angle(source, angle)?;
        let centre = self.geometry.detector_angle(source, j);
        let off = ((angle - centre + PI).rem_euclid(2.0 * PI) - PI).abs();
        if off > self.config.detector_half_width {
            return None;
        }
        let bin = self.grid.bin_of(e)?;
        Some((source * self.geometry.n_d + j, bin))
    }
}

/// Cosine of a Klein-Nishina scattering angle at energy `e`, by rejection
/// against a uniform-in-cosine proposal, plus a random in-plane side.
fn sample_klein_nishina(e: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let k = e / crate::geometry::ELECTRON_REST_ENERGY;
    loop {
        let c: f64 = rng.gen_range(-1.0..=1.0);
        let ratio = 1.0 / (1.0 + k * (1.0 - c));
        // differential cross-section relative to its forward maximum
        let accept = 0.5 * ratio * ratio * (ratio + 1.0 / ratio - (1.0 - c * c));
        if rng.gen::<f64>() < accept {
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            return (c, side);
        }
    }
}

/// Ray parameters where `x + t u` is inside the square `[-half, half]^2`.
fn ray_box(x: Point, u: Point, half: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p, d) in [(x.x, u.x), (x.y, u.y)] {
        if d == 0.0 {
            if p.abs() > half {
                return None;
            }
            continue;
        }
        let a = (-half - p) / d;
        let b = (half - p) / d;
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0.max(0.0)).then_some((t0, t1))
}

/// Forward crossing of the ray with the scanner circle.
fn exit_point(x: Point, u: Point, radius: f64) -> Point {
    let b = x.dot(u);
    let c = x.dot(x) - radius * radius;
    let t = -b + (b * b - c).max(0.0).sqrt();
    x + u * t
}

/// Least-squares scale `s` minimising `|s * mc - det|`.
pub fn calibrate_scale(mc_g1: &Spectrum, det_g1: &Spectrum) -> Result<f64> {
    mc_g1.same_shape(det_g1)?;
    if det_g1.values.iter().all(|&v| v == 0.0) {
        return Err(invalid("deterministic spectrum is identically zero"));
    }
    let mm = crate::matrix::dot(&mc_g1.values, &mc_g1.values);
    if mm == 0.0 {
        return Err(invalid("Monte-Carlo spectrum is identically zero"));
    }
    Ok(crate::matrix::dot(&mc_g1.values, &det_g1.values) / mm)
}
