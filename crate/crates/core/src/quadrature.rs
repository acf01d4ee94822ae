//! Small quadrature toolbox: Gauss-Legendre rules and trapezoid grids.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate `f` over `[a, b]` with the given Gauss-Legendre rule.
pub fn integrate(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0.iter().zip(&rule.1).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// One axis of a tensor trapezoid grid over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidAxis {
    pub lo: f64,
    pub step: f64,
    /// Number of intervals; there are `intervals + 1` nodes.
    pub intervals: usize,
}

impl TrapezoidAxis {
    pub fn new(lo: f64, hi: f64, intervals: usize) -> Self {
        TrapezoidAxis { lo, step: (hi - lo) / intervals as f64, intervals }
    }

    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.intervals {
            0.5 * self.step
        } else {
            self.step
        }
    }
}
