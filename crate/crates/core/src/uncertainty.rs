//! Per-subproblem model-uncertainty levels and Poisson noise with its
//! realized magnitudes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Result};
use crate::forward::Spectrum;

/// Bounds used by the discrepancy principle, all `P x K` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub p: usize,
    pub k: usize,
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub tau: f64,
    pub rho: f64,
}

impl UncertaintyMap {
    pub fn new(p: usize, k: usize, eta: Vec<f64>, delta: Vec<f64>, tau: f64, rho: f64) -> Result<Self> {
        if eta.len() != p * k || delta.len() != p * k {
            return Err(invalid(format!("uncertainty arrays must hold {} values", p * k)));
        }
        if eta.iter().chain(&delta).any(|v| !(*v >= 0.0)) {
            return Err(invalid("eta and delta must be nonnegative"));
        }
        Ok(UncertaintyMap { p, k, eta, delta, tau, rho })
    }

    /// Discrepancy thresholds `tau * (rho * eta + delta)`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.eta.iter().zip(&self.delta).map(|(e, d)| self.tau * (self.rho * e + d)).collect()
    }
}

/// `eta = |exact - inexact| / rho`, so `rho * eta` is the model error of
/// each subproblem at the ground truth.
pub fn estimate_eta(exact_data: &Spectrum, inexact_applied: &Spectrum, rho: f64) -> Result<Vec<f64>> {
    estimate_eta_with_margin(exact_data, inexact_applied, rho, 0.0)
}

/// As [`estimate_eta`], inflated uniformly by `1 + margin`.
pub fn estimate_eta_with_margin(exact_data: &Spectrum, inexact_applied: &Spectrum, rho: f64, margin: f64) -> Result<Vec<f64>> {
    if exact_data.p != inexact_applied.p || exact_data.k != inexact_applied.k {
        return Err(invalid(format!(
            "spectra of shape {}x{} and {}x{}",
            exact_data.p, exact_data.k, inexact_applied.p, inexact_applied.k
        )));
    }
    if !(rho > 0.0) || !(margin >= 0.0) {
        return Err(invalid("rho must be positive and the margin nonnegative"));
    }
    Ok(exact_data
        .values
        .iter()
        .zip(&inexact_applied.values)
        .map(|(a, b)| (a - b).abs() / rho * (1.0 + margin))
        .collect())
}

/// Poisson noise at a count level chosen so that the expected relative L2
/// perturbation equals `relative_level`. Returns the noisy spectrum and the
/// realized per-entry deviations.
pub fn add_poisson_noise(spec: &Spectrum, relative_level: f64, seed: u64) -> Result<(Spectrum, Vec<f64>)> {
    if spec.values.iter().any(|&v| !(v >= 0.0)) {
        return Err(invalid("Poisson noise needs a nonnegative spectrum"));
    }
    if !(relative_level > 0.0) {
        return Err(invalid(format!("noise level must be positive, got {relative_level}")));
    }
    let total: f64 = spec.values.iter().sum();
    let sq: f64 = spec.values.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok((spec.clone(), vec![0.0; spec.values.len()]));
    }
    // E|noisy - spec|^2 = sum(spec) / c
    let counts_per_unit = total / (relative_level * relative_level * sq);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let lambda = v * counts_per_unit;
        let n = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| invalid(format!("Poisson rate {lambda}: {e}")))?.sample(&mut rng)
        } else {
            0.0
        };
        noisy.push(n / counts_per_unit);
    }
    let delta = noisy.iter().zip(&spec.values).map(|(a, b)| (a - b).abs()).collect();
    Ok((Spectrum { values: noisy, ..*spec }, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Spectrum {
        Spectrum::new(20, 10, (0..200).map(|i| 1.0 + (i % 17) as f64).collect()).unwrap()
    }

    #[test]
    fn eta_examples() {
        let a = ramp();
        assert!(estimate_eta(&a, &a, 3.0).unwrap().iter().all(|&e| e == 0.0));
        let mut b = a.clone();
        b.values[7] -= 3.0 * 0.5;
        let eta = estimate_eta(&a, &b, 3.0).unwrap();
        assert!((eta[7] - 0.5).abs() < 1e-12);
        assert_eq!(eta.iter().filter(|&&e| e != 0.0).count(), 1);
        let wide = estimate_eta_with_margin(&a, &b, 3.0, 0.2).unwrap();
        assert!((wide[7] - 0.6).abs() < 1e-12);
        assert!(estimate_eta(&a, &Spectrum::zeros(10, 20), 1.0).is_err());
    }

    #[test]
    fn zero_spectrum_stays_zero() {
        let (noisy, delta) = add_poisson_noise(&Spectrum::zeros(4, 5), 0.024, 1).unwrap();
        assert!(noisy.values.iter().chain(&delta).all(|&v| v == 0.0));
    }

    #[test]
    fn realized_level_and_reproducibility() {
        let s = ramp();
        let (a, delta) = add_poisson_noise(&s, 0.024, 11).unwrap();
        let rel = a.sub(&s).unwrap().norm() / s.norm();
        assert!((0.5 * 0.024..=1.5 * 0.024).contains(&rel), "{rel}");
        assert!(delta.iter().zip(a.values.iter().zip(&s.values)).all(|(d, (x, y))| *d == (x - y).abs()));
        assert_eq!(add_poisson_noise(&s, 0.024, 11).unwrap().0, a);
        assert!(add_poisson_noise(&s.scaled(-1.0), 0.1, 1).is_err());
    }

    #[test]
    fn noise_is_unbiased() {
        let s = Spectrum::new(1, 3, vec![2.0, 5.0, 0.5]).unwrap();
        let runs = 100;
        let level = 0.1;
        let c = 7.5 / (level * level * (4.0 + 25.0 + 0.25));
        let mut mean = [0.0; 3];
        for seed in 0..runs {
            let (n, _) = add_poisson_noise(&s, level, seed).unwrap();
            for i in 0..3 {
                mean[i] += n.values[i] / runs as f64;
            }
        }
        for i in 0..3 {
            let se = (s.values[i] / c).sqrt() / (runs as f64).sqrt();
            assert!((mean[i] - s.values[i]).abs() <= 3.0 * se, "{i}: {} vs {}", mean[i], s.values[i]);
        }
    }
}
