//! Image quality measures for reconstructions.

use crate::error::{invalid, CstError, Result};

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub snr: f64,
    /// dB.
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
}

/// Metrics of `rec` against `gt`, both `rows x cols` row-major.
pub fn compute_metrics(rec: &[f64], gt: &[f64], rows: usize, cols: usize) -> Result<MetricReport> {
    compute_metrics_with(rec, gt, rows, cols, false)
}

/// As [`compute_metrics`]; `squared_nmse` reports `|rec - gt|^2 / |gt|^2`.
pub fn compute_metrics_with(rec: &[f64], gt: &[f64], rows: usize, cols: usize, squared_nmse: bool) -> Result<MetricReport> {
    if rec.len() != rows * cols || gt.len() != rows * cols {
        return Err(CstError::ShapeMismatch(format!(
            "images of {} and {} values for shape {rows}x{cols}",
            rec.len(),
            gt.len()
        )));
    }
    let gt_norm2: f64 = gt.iter().map(|v| v * v).sum();
    if gt_norm2 == 0.0 {
        return Err(invalid("ground truth is identically zero"));
    }
    let err2: f64 = rec.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum();
    let nmse = if squared_nmse { err2 / gt_norm2 } else { (err2 / gt_norm2).sqrt() };
    Ok(MetricReport { snr: snr(rec), psnr: psnr(rec, gt), ssim: ssim(rec, gt, rows, cols), nmse })
}

/// Mean over population standard deviation; `+inf` for a flat image.
pub fn snr(image: &[f64]) -> f64 {
    let n = image.len() as f64;
    let mean = image.iter().sum::<f64>() / n;
    let var = image.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        f64::INFINITY
    } else {
        mean / var.sqrt()
    }
}

/// `10 log10(max(gt)^2 / MSE)`; `+inf` when the images agree.
pub fn psnr(rec: &[f64], gt: &[f64]) -> f64 {
    let mse = rec.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    let peak = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    10.0 * (peak * peak / mse).log10()
}

/// Mean structural similarity with an 11x11 Gaussian window. Near the image
/// border the window is cut to the image and renormalized.
pub fn ssim(rec: &[f64], gt: &[f64], rows: usize, cols: usize) -> f64 {
    let hi = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = gt.iter().copied().fold(f64::INFINITY, f64::min);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let kernel: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let r = SSIM_RADIUS as isize;
    let mut total = 0.0;
    for y in 0..rows as isize {
        for x in 0..cols as isize {
            let (mut sw, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= rows as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= cols as isize {
                        continue;
                    }
                    let w = kernel[(dy + r) as usize] * kernel[(dx + r) as usize];
                    let idx = yy as usize * cols + xx as usize;
                    let (a, b) = (rec[idx], gt[idx]);
                    sw += w;
                    mx += w * a;
                    my += w * b;
                    sxx += w * a * a;
                    syy += w * b * b;
                    sxy += w * a * b;
                }
            }
            let (mx, my) = (mx / sw, my / sw);
            let vx = sxx / sw - mx * mx;
            let vy = syy / sw - my * my;
            let cxy = sxy / sw - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / (rows * cols) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt() -> Vec<f64> {
        vec![1.0, 2.0, 3.0, 4.0, 2.0, 5.0, 1.0, 0.5, 3.0, 3.0, 2.0, 1.0, 0.0, 1.0, 4.0, 2.0]
    }

    #[test]
    fn identical_images() {
        let g = gt();
        let m = compute_metrics(&g, &g, 4, 4).unwrap();
        assert_eq!(m.nmse, 0.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.psnr, f64::INFINITY);
    }

    #[test]
    fn zero_reconstruction_and_scale_law() {
        let g = gt();
        assert_eq!(compute_metrics(&[0.0; 16], &g, 4, 4).unwrap().nmse, 1.0);
        for a in [0.0, 0.5, 2.0] {
            let rec: Vec<f64> = g.iter().map(|v| a * v).collect();
            let m = compute_metrics(&rec, &g, 4, 4).unwrap();
            assert!((m.nmse - (a - 1.0f64).abs()).abs() < 1e-15);
        }
        let sq = compute_metrics_with(&vec![2.0; 16], &vec![1.0; 16], 4, 4, true).unwrap();
        assert_eq!(sq.nmse, 1.0);
    }

    #[test]
    fn psnr_falls_with_noise() {
        let g = gt();
        let noise = [0.3, -0.2, 0.1, -0.4, 0.2, 0.0, -0.1, 0.3, -0.3, 0.1, 0.2, -0.2, 0.4, -0.1, 0.0, 0.1];
        let levels: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|s| {
                let rec: Vec<f64> = g.iter().zip(&noise).map(|(a, n)| a + s * n).collect();
                psnr(&rec, &g)
            })
            .collect();
        assert!(levels[0] > levels[1] && levels[1] > levels[2]);
    }

    #[test]
    fn snr_and_errors() {
        assert_eq!(snr(&[3.0; 4]), f64::INFINITY);
        assert!((snr(&[1.0, 3.0]) - 2.0).abs() < 1e-15);
        assert!(compute_metrics(&[1.0; 4], &[0.0; 4], 2, 2).is_err());
        assert!(compute_metrics(&[1.0; 3], &[1.0; 4], 2, 2).is_err());
    }
}
