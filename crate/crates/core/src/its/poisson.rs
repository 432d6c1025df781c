//! Poisson log-link regression with lagged `log1p` counts as covariates,
//! fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::arima::{squared_correlation, wald_p};
use super::{ArimaOrder, ItsFit, ItsModel, Regressors};
use crate::error::{Error, Result};
use crate::linalg::least_squares;

const MAX_ITER: usize = 100;
const DEVIANCE_TOL: f64 = 1e-8;
/// Linear predictor bound beyond which the fit is treated as diverging.
const ETA_LIMIT: f64 = 30.0;

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

pub fn fit_poisson_ar(y: &[u64], reg: &Regressors, lags: &[usize]) -> Result<ItsFit> {
    reg.validate(y.len())?;
    if y.iter().all(|v| *v == 0) {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if lags.contains(&0) {
        return Err(Error::Invalid("lags must be at least 1".into()));
    }
    let n = y.len() - max_lag.min(y.len());
    let k0 = reg.x.ncols();
    let k = k0 + lags.len();
    if n <= 10 * k {
        return Err(Error::Invalid(format!("{n} usable observations for {k} coefficients")));
    }
    let x = DMatrix::from_fn(n, k, |i, j| {
        let t = i + max_lag;
        if j < k0 {
            reg.x[(t, j)]
        } else {
            (y[t - lags[j - k0]] as f64).ln_1p()
        }
    });
    let yv: Vec<f64> = y[max_lag..].iter().map(|v| *v as f64).collect();

    let mut mu: Vec<f64> = yv.iter().map(|v| v + 0.5).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut dev = deviance(&yv, &mu);
    let mut beta = DVector::zeros(k);
    let mut cov_unscaled = DMatrix::zeros(k, k);
    let mut iterations = 0;
    let mut converged = false;
    for iter in 1..=MAX_ITER {
        iterations = iter;
        let sw: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let xw = DMatrix::from_fn(n, k, |i, j| x[(i, j)] * sw[i]);
        let zw = DVector::from_fn(n, |i, _| (eta[i] + (yv[i] - mu[i]) / mu[i]) * sw[i]);
        let ls = least_squares(&xw, &zw)
            .map_err(|_| Error::Degenerate("weighted design lost rank (separation)".into()))?;
        beta = ls.coef;
        cov_unscaled = ls.xtx_inv;
        let new_eta: Vec<f64> = (0..n).map(|i| x.row(i).dot(&beta.transpose())).collect();
        if new_eta.iter().any(|e| !e.is_finite() || e.abs() > ETA_LIMIT) {
            return Err(Error::Degenerate("linear predictor diverged".into()));
        }
        eta = new_eta;
        mu = eta.iter().map(|e| e.exp()).collect();
        let new_dev = deviance(&yv, &mu);
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            trace: format!("deviance {dev:.6e}"),
        });
    }
    let se: Vec<f64> = (0..k).map(|i| cov_unscaled[(i, i)].max(0.0).sqrt()).collect();
    let pearson = yv.iter().zip(&mu).map(|(y, m)| (y - m) * (y - m) / m).sum::<f64>() / (n - k) as f64;
    let loglik: f64 = yv.iter().zip(&mu).map(|(&y, &m)| y * m.ln() - m - ln_gamma(y + 1.0)).sum();
    let kf = k as f64;
    let aic = -2.0 * loglik + 2.0 * kf;
    let aicc = aic + 2.0 * kf * (kf + 1.0) / (n as f64 - kf - 1.0);
    let r2 = squared_correlation(&yv, &mu);
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - kf - 1.0);
    let coef: Vec<f64> = beta.iter().take(k0).copied().collect();
    let coef_se = se[..k0].to_vec();
    let (treatment_coef, treatment_se) = match reg.treatment {
        Some(t) => (coef[t], coef_se[t]),
        None => (f64::NAN, f64::NAN),
    };
    Ok(ItsFit {
        model: ItsModel::PoissonAr { lags: lags.to_vec() },
        order: ArimaOrder { p: 0, d: 0, q: 0 },
        coef_names: reg.names.clone(),
        coef,
        coef_se,
        ar: beta.iter().skip(k0).copied().collect(),
        ar_se: se[k0..].to_vec(),
        ma: vec![],
        ma_se: vec![],
        drift: None,
        sigma2: pearson,
        loglik,
        aic,
        aicc,
        r2,
        adj_r2,
        treatment_coef,
        treatment_se,
        treatment_p: wald_p(treatment_coef, treatment_se),
        near_unit_root: false,
        n_used: n,
        iterations,
        residuals: yv.iter().zip(&mu).map(|(y, m)| y - m).collect(),
    })
}
