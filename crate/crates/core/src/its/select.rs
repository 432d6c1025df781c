//! ARIMA order selection: KPSS for the differencing order, then a stepwise
//! AICc search over (p, q).

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use super::arima::{difference, fit_arima_regression_with, max_inverse_root, FitOptions};
use super::{ArimaOrder, ItsFit, Regressors, MAX_DIFF, MAX_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{drop_zero_columns, least_squares};

/// 5% critical value of the KPSS level-stationarity statistic.
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderSearch {
    pub max_p: usize,
    pub max_q: usize,
    pub max_d: usize,
}

impl Default for OrderSearch {
    fn default() -> Self {
        Self {
            max_p: MAX_ORDER,
            max_q: MAX_ORDER,
            max_d: MAX_DIFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub order: ArimaOrder,
    /// KPSS statistic of the regression residuals at each differencing order tried.
    pub kpss: Vec<(usize, f64)>,
    /// AICc of every (p, q) candidate visited at the chosen `d`; `None` if the fit failed.
    pub candidates: Vec<(ArimaOrder, Option<f64>)>,
}

/// KPSS level statistic with Bartlett long-run variance over
/// `trunc(4 (n/100)^(1/4))` lags.
pub fn kpss_statistic(x: &[f64]) -> f64 {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let e: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut s = 0.0;
    let mut eta = 0.0;
    for v in &e {
        s += v;
        eta += s * s;
    }
    eta /= nf * nf;
    let lags = (4.0 * (nf / 100.0).powf(0.25)).trunc() as usize;
    let mut lr = e.iter().map(|v| v * v).sum::<f64>() / nf;
    for l in 1..=lags.min(n - 1) {
        let gamma = (l..n).map(|t| e[t] * e[t - l]).sum::<f64>() / nf;
        lr += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma;
    }
    if lr <= 0.0 {
        return f64::INFINITY;
    }
    eta / lr
}

fn regression_residuals(y: &[f64], reg: &Regressors, d: usize) -> Result<Vec<f64>> {
    let w = difference(y, d);
    let n = w.len();
    let x = &reg.x;
    let dx = nalgebra::DMatrix::from_fn(n, x.ncols(), |i, j| {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        difference(&col, d)[i]
    });
    let (z, _) = drop_zero_columns(&dx);
    if z.ncols() == 0 {
        let m = w.iter().sum::<f64>() / n as f64;
        return Ok(w.iter().map(|v| v - m).collect());
    }
    Ok(least_squares(&z, &DVector::from_vec(w))?.residuals.iter().copied().collect())
}

/// Candidates with an AR or MA root within this distance of the unit circle
/// are discarded during the search.
const ROOT_MARGIN: f64 = 0.01;

fn near_unit_circle(fit: &ItsFit) -> bool {
    let neg_ma: Vec<f64> = fit.ma.iter().map(|t| -t).collect();
    let limit = 1.0 / (1.0 + ROOT_MARGIN);
    max_inverse_root(&fit.ar) > limit || max_inverse_root(&neg_ma) > limit
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Picks `d` as the smallest order whose residuals pass KPSS at 5%, moving to
/// a higher order only when differencing also reduces the residual variance.
fn choose_d(y: &[f64], reg: &Regressors, max_d: usize) -> Result<(usize, Vec<(usize, f64)>)> {
    let mut stats = Vec::new();
    let mut resid = regression_residuals(y, reg, 0)?;
    let mut d = 0;
    loop {
        let stat = kpss_statistic(&resid);
        stats.push((d, stat));
        if stat < KPSS_CRITICAL_5PCT || d == max_d {
            break;
        }
        let next = regression_residuals(y, reg, d + 1)?;
        if variance(&next) >= variance(&resid) {
            break;
        }
        resid = next;
        d += 1;
    }
    Ok((d, stats))
}

pub fn select_orders(y: &[f64], reg: &Regressors, search: &OrderSearch) -> Result<SelectionRecord> {
    if search.max_p > MAX_ORDER || search.max_q > MAX_ORDER || search.max_d > MAX_DIFF {
        return Err(Error::Invalid(format!(
            "search bounds exceed p, q <= {MAX_ORDER}, d <= {MAX_DIFF}"
        )));
    }
    reg.validate(y.len())?;
    let (d, kpss) = choose_d(y, reg, search.max_d)?;
    let opts = FitOptions {
        conditioning: Some(search.max_p),
        ..Default::default()
    };
    let mut tried: BTreeMap<(usize, usize), Option<f64>> = BTreeMap::new();
    let visit = |p: usize, q: usize, tried: &mut BTreeMap<(usize, usize), Option<f64>>| -> Option<f64> {
        *tried.entry((p, q)).or_insert_with(|| {
            let order = ArimaOrder { p, d, q };
            match fit_arima_regression_with(y, reg, order, &opts) {
                Ok(fit) if fit.aicc.is_finite() && !near_unit_circle(&fit) => Some(fit.aicc),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("ARIMA{order} skipped: {e}");
                    None
                }
            }
        })
    };
    let clip = |p: usize, q: usize| (p.min(search.max_p), q.min(search.max_q));
    let mut best: Option<((usize, usize), f64)> = None;
    for (p, q) in [clip(2, 2), (0, 0), clip(1, 0), clip(0, 1)] {
        if let Some(a) = visit(p, q, &mut tried) {
            if best.is_none_or(|(_, b)| a < b) {
                best = Some(((p, q), a));
            }
        }
    }
    while let Some(((bp, bq), ba)) = best {
        let mut improved = None;
        for dp in -1i64..=1 {
            for dq in -1i64..=1 {
                let (p, q) = (bp as i64 + dp, bq as i64 + dq);
                if (dp, dq) == (0, 0) || p < 0 || q < 0 || p > search.max_p as i64 || q > search.max_q as i64 {
                    continue;
                }
                let (p, q) = (p as usize, q as usize);
                if let Some(a) = visit(p, q, &mut tried) {
                    if a < improved.map_or(ba, |(_, x)| x) {
                        improved = Some(((p, q), a));
                    }
                }
            }
        }
        match improved {
            Some(b) => best = Some(b),
            None => break,
        }
    }
    let (p, q) = best.map_or((0, 0), |(pq, _)| pq);
    Ok(SelectionRecord {
        order: ArimaOrder { p, d, q },
        kpss,
        candidates: tried
            .into_iter()
            .map(|((p, q), a)| (ArimaOrder { p, d, q }, a))
            .collect(),
    })
}

/// Selects the order and refits it with the default conditioning start.
pub fn select_and_fit(y: &[f64], reg: &Regressors, search: &OrderSearch) -> Result<(SelectionRecord, ItsFit)> {
    let sel = select_orders(y, reg, search)?;
    let fit = super::fit_arima_regression(y, reg, sel.order)?;
    Ok((sel, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64;
    use nalgebra::DMatrix;

    fn intercept(n: usize) -> Regressors {
        Regressors::new(DMatrix::from_element(n, 1, 1.0), vec!["intercept".into()], None).unwrap()
    }

    #[test]
    fn kpss_separates_noise_and_walk() {
        let mut rng = XorShift64::new(1);
        let noise: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        assert!(kpss_statistic(&noise) < KPSS_CRITICAL_5PCT);
        let mut s = 0.0;
        let walk: Vec<f64> = noise.iter().map(|e| {
            s += e;
            s
        })
        .collect();
        assert!(kpss_statistic(&walk) > KPSS_CRITICAL_5PCT);
    }

    #[test]
    fn white_noise_selects_zero_order() {
        let mut rng = XorShift64::new(21);
        let y: Vec<f64> = (0..600).map(|_| rng.normal()).collect();
        let sel = select_orders(&y, &intercept(600), &OrderSearch::default()).unwrap();
        assert_eq!(sel.order, ArimaOrder { p: 0, d: 0, q: 0 });
    }

    #[test]
    fn random_walk_selects_one_difference() {
        let mut rng = XorShift64::new(4);
        let mut s = 0.0;
        let y: Vec<f64> = (0..1000).map(|_| {
            s += rng.normal();
            s
        })
        .collect();
        let sel = select_orders(&y, &intercept(1000), &OrderSearch { max_p: 2, max_q: 2, max_d: 2 }).unwrap();
        assert!(sel.kpss[0].1 > KPSS_CRITICAL_5PCT);
        assert_eq!(sel.order.d, 1);
    }
}
