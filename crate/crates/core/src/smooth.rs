//! Loess smoothing for display series.
//!
//! Degree-1 local regression against the block index with tricube weights over
//! the `ceil(span * n)` nearest points, no robustness iterations.

use crate::error::{Error, Result};

pub const DEFAULT_SPAN: f64 = 0.07;

/// Neighbourhoods smaller than this cannot support a local line.
const MIN_NEIGHBOURS: usize = 3;

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let a = 1.0 - u * u * u;
        a * a * a
    }
}

pub fn loess_smooth(series: &[f64], span: f64) -> Result<Vec<f64>> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::Invalid(format!("loess span must be in (0, 1], got {span}")));
    }
    let n = series.len();
    let q = ((span * n as f64).ceil() as usize).max(MIN_NEIGHBOURS).min(n);
    if n < 4 {
        return Err(Error::Invalid(format!("loess needs at least 4 points, got {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub((q - 1) / 2).min(n - q);
        let hi = lo + q;
        let h = (i - lo).max(hi - 1 - i) as f64;
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (j, &y) in series.iter().enumerate().take(hi).skip(lo) {
            let d = j as f64 - i as f64;
            let w = if h > 0.0 { tricube(d.abs() / h) } else { 1.0 };
            sw += w;
            sx += w * d;
            sy += w * y;
            sxx += w * d * d;
            sxy += w * d * y;
        }
        let var = sxx - sx * sx / sw;
        // local line evaluated at d = 0
        let fit = if var > 1e-12 * sxx.max(f64::MIN_POSITIVE) {
            let slope = (sxy - sx * sy / sw) / var;
            sy / sw - slope * sx / sw
        } else {
            sy / sw
        };
        out.push(fit);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rms;
    use crate::rng::XorShift64;

    #[test]
    fn linear_is_reproduced() {
        let xs: Vec<f64> = (0..100).map(|i| 3.0 - 0.25 * i as f64).collect();
        for span in [0.07, 0.3, 1.0] {
            let s = loess_smooth(&xs, span).unwrap();
            for (a, b) in s.iter().zip(&xs) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_is_reproduced() {
        let s = loess_smooth(&[2.5; 40], 0.07).unwrap();
        assert!(s.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn noisy_sine_is_denoised() {
        let n = 1000;
        let mut rng = XorShift64::new(7);
        let truth: Vec<f64> = (0..n).map(|i| (i as f64 * 2.0 * std::f64::consts::PI / 250.0).sin()).collect();
        let noisy: Vec<f64> = truth.iter().map(|t| t + 0.3 * rng.normal()).collect();
        let smooth = loess_smooth(&noisy, DEFAULT_SPAN).unwrap();
        let err_in: Vec<f64> = noisy.iter().zip(&truth).map(|(a, b)| a - b).collect();
        let err_out: Vec<f64> = smooth.iter().zip(&truth).map(|(a, b)| a - b).collect();
        assert!(rms(&err_out) < rms(&err_in));
    }

    #[test]
    fn bad_arguments() {
        assert!(loess_smooth(&[1.0; 10], 0.0).is_err());
        assert!(loess_smooth(&[1.0; 10], 1.5).is_err());
        assert!(loess_smooth(&[1.0; 3], 0.5).is_err());
    }
}
