//! Regression with ARMA errors by conditional sum of squares.
//!
//! After differencing `y` and the regressors `d` times, residuals follow
//!
//! ```text
//! u_t = w_t - z_t b
//! e_t = u_t - sum_i phi_i u_{t-i} - sum_j theta_j e_{t-j}
//! ```
//!
//! with `e_t = 0` before the conditioning start. The sum of squared `e_t` is
//! minimized by Levenberg-Marquardt on the analytic Jacobian of the recursion,
//! rejecting steps that leave the stationary/invertible region.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ArimaOrder, ItsFit, ItsModel, Regressors};
use crate::error::{Error, Result};
use crate::linalg::{drop_zero_columns, least_squares};

/// AR modulus above which a fit is flagged as close to a unit root.
pub const NEAR_UNIT_ROOT: f64 = 0.98;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Add a constant to the differenced regressors (only when `d >= 1`).
    pub include_drift: bool,
    /// First residual index used in the sum of squares; defaults to `p`.
    pub conditioning: Option<usize>,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            include_drift: false,
            conditioning: None,
            max_iter: 500,
        }
    }
}

pub fn difference(y: &[f64], d: usize) -> Vec<f64> {
    let mut out = y.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

fn difference_columns(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = x.nrows().saturating_sub(d);
    let cols: Vec<Vec<f64>> = (0..x.ncols())
        .map(|j| difference(&x.column(j).iter().copied().collect::<Vec<_>>(), d))
        .collect();
    DMatrix::from_fn(n, x.ncols(), |i, j| cols[j][i])
}

/// Whether `1 - sum_i a_i z^i` has all roots outside the unit circle
/// (step-down recursion through the partial autocorrelations).
pub fn ar_is_stationary(a: &[f64]) -> bool {
    let mut a = a.to_vec();
    while let Some(&r) = a.last() {
        if !(r.abs() < 1.0) {
            return false;
        }
        let k = a.len();
        let prev: Vec<f64> = (0..k - 1)
            .map(|i| (a[i] + r * a[k - 2 - i]) / (1.0 - r * r))
            .collect();
        a = prev;
    }
    true
}

/// Largest modulus among the inverse roots of `1 - sum_i a_i z^i`.
pub fn max_inverse_root(a: &[f64]) -> f64 {
    let p = a.len();
    if p == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(p, p, |i, j| {
        if i == 0 {
            a[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

struct Problem<'a> {
    w: &'a [f64],
    z: &'a DMatrix<f64>,
    p: usize,
    q: usize,
    cond: usize,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        self.p + self.q + self.z.ncols()
    }

    fn admissible(&self, params: &[f64]) -> bool {
        let neg_theta: Vec<f64> = params[self.p..self.p + self.q].iter().map(|t| -t).collect();
        params.iter().all(|v| v.is_finite())
            && ar_is_stationary(&params[..self.p])
            && ar_is_stationary(&neg_theta)
    }

    /// Residuals from the conditioning start on, and optionally their Jacobian.
    fn residuals(&self, params: &[f64], with_jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let (p, q) = (self.p, self.q);
        let k = self.z.ncols();
        let n = self.w.len();
        let np = self.n_params();
        let phi = &params[..p];
        let theta = &params[p..p + q];
        let beta = &params[p + q..];
        let u: Vec<f64> = (0..n)
            .map(|t| self.w[t] - (0..k).map(|c| self.z[(t, c)] * beta[c]).sum::<f64>())
            .collect();
        let mut e = vec![0.0; n];
        let mut jac = if with_jac { DMatrix::zeros(n, np) } else { DMatrix::zeros(0, 0) };
        for t in self.cond..n {
            let mut et = u[t];
            for i in 1..=p {
                et -= phi[i - 1] * u[t - i];
            }
            for j in 1..=q {
                if t >= self.cond + j {
                    et -= theta[j - 1] * e[t - j];
                }
            }
            e[t] = et;
            if with_jac {
                for i in 1..=p {
                    jac[(t, i - 1)] = -u[t - i];
                }
                for j in 1..=q {
                    if t >= self.cond + j {
                        jac[(t, p + j - 1)] = -e[t - j];
                    }
                }
                for c in 0..k {
                    let mut v = -self.z[(t, c)];
                    for i in 1..=p {
                        v += phi[i - 1] * self.z[(t - i, c)];
                    }
                    jac[(t, p + q + c)] = v;
                }
                for j in 1..=q {
                    if t >= self.cond + j {
                        for col in 0..np {
                            jac[(t, col)] -= theta[j - 1] * jac[(t - j, col)];
                        }
                    }
                }
            }
        }
        let m = n - self.cond;
        let ev = DVector::from_fn(m, |i, _| e[self.cond + i]);
        let jm = with_jac.then(|| jac.rows(self.cond, m).into_owned());
        (ev, jm)
    }

    fn sse(&self, params: &[f64]) -> f64 {
        self.residuals(params, false).0.norm_squared()
    }

    fn gradient(&self, params: &[f64]) -> DVector<f64> {
        let (e, j) = self.residuals(params, true);
        j.unwrap().transpose() * e * 2.0
    }
}

struct Minimum {
    params: Vec<f64>,
    sse: f64,
    iterations: usize,
}

fn levenberg_marquardt(prob: &Problem, start: Vec<f64>, max_iter: usize) -> Result<Minimum> {
    let np = start.len();
    let mut params = start;
    let mut sse = prob.sse(&params);
    let mut mu = 1e-3;
    let mut history = vec![sse];
    for iter in 1..=max_iter {
        if sse == 0.0 || np == 0 {
            return Ok(Minimum { params, sse, iterations: iter - 1 });
        }
        let (e, jac) = prob.residuals(&params, true);
        let jac = jac.unwrap();
        let g = jac.transpose() * &e;
        let h = jac.transpose() * &jac;
        let mut accepted = None;
        while mu < 1e16 {
            let mut a = h.clone();
            for i in 0..np {
                a[(i, i)] += mu * h[(i, i)].max(1e-12);
            }
            let step = match Cholesky::new(a) {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            if prob.admissible(&cand) {
                let s_new = prob.sse(&cand);
                if s_new < sse {
                    accepted = Some((cand, s_new, step.norm()));
                    break;
                }
            }
            mu *= 4.0;
        }
        match accepted {
            None => return Ok(Minimum { params, sse, iterations: iter }),
            Some((cand, s_new, step_norm)) => {
                let pnorm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                let small_gain = sse - s_new <= 1e-12 * sse;
                let small_step = step_norm <= 1e-10 * (1.0 + pnorm);
                params = cand;
                sse = s_new;
                history.push(sse);
                mu = (mu / 3.0).max(1e-12);
                if small_gain || small_step {
                    return Ok(Minimum { params, sse, iterations: iter });
                }
            }
        }
    }
    let tail: Vec<String> = history.iter().rev().take(5).map(|s| format!("{s:.6e}")).collect();
    Err(Error::NoConvergence {
        iterations: max_iter,
        trace: format!("last sums of squares (newest first): {}", tail.join(", ")),
    })
}

/// Covariance of the estimates from the finite-difference Hessian of the sum
/// of squares; Gauss-Newton `sigma^2 (JᵀJ)^-1` when that Hessian is unusable.
fn covariance(prob: &Problem, params: &[f64], sigma2: f64) -> DMatrix<f64> {
    let np = params.len();
    let (_, jac) = prob.residuals(params, true);
    let jac = jac.unwrap();
    let jtj = jac.transpose() * &jac;
    let gn = Cholesky::new(jtj.clone())
        .map(|c| c.inverse() * sigma2)
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    if sigma2 == 0.0 {
        return DMatrix::zeros(np, np);
    }
    let mut hess = DMatrix::zeros(np, np);
    for i in 0..np {
        let sd = gn[(i, i)].sqrt();
        let h = if sd.is_finite() && sd > 0.0 { 1e-3 * sd } else { 1e-6 * params[i].abs().max(1e-3) };
        let mut up = params.to_vec();
        let mut dn = params.to_vec();
        up[i] += h;
        dn[i] -= h;
        if !prob.admissible(&up) || !prob.admissible(&dn) {
            return gn;
        }
        let col = (prob.gradient(&up) - prob.gradient(&dn)) / (2.0 * h);
        hess.set_column(i, &col);
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    match Cholesky::new(hess) {
        Some(c) => c.inverse() * (2.0 * sigma2),
        None => gn,
    }
}

/// Fits `y = X b + u` with ARIMA(p, d, q) errors.
pub fn fit_arima_regression(y: &[f64], reg: &Regressors, order: ArimaOrder) -> Result<ItsFit> {
    fit_arima_regression_with(y, reg, order, &FitOptions::default())
}

pub fn fit_arima_regression_with(
    y: &[f64],
    reg: &Regressors,
    order: ArimaOrder,
    opts: &FitOptions,
) -> Result<ItsFit> {
    order.validate()?;
    reg.validate(y.len())?;
    let ArimaOrder { p, d, q } = order;
    let w = difference(y, d);
    let (mut z, kept) = drop_zero_columns(&difference_columns(&reg.x, d));
    let mut names: Vec<String> = kept.iter().map(|&j| reg.names[j].clone()).collect();
    if opts.include_drift && d >= 1 {
        let k = z.ncols();
        z = z.insert_column(k, 1.0);
        names.push("drift".into());
    }
    let k = z.ncols();
    let n = w.len();
    if n <= 10 * (p + q + k) || n == 0 {
        return Err(Error::Invalid(format!(
            "{n} usable observations for {} parameters; need more than ten per parameter",
            p + q + k
        )));
    }
    let cond = opts.conditioning.unwrap_or(p);
    if cond < p || cond >= n {
        return Err(Error::Invalid(format!("conditioning start {cond} must be in [{p}, {n})")));
    }
    let beta0 = if k > 0 {
        let wv = DVector::from_column_slice(&w[cond..]);
        least_squares(&z.rows(cond, n - cond).into_owned(), &wv)?.coef
    } else {
        DVector::zeros(0)
    };
    let mut start = vec![0.0; p + q];
    start.extend(beta0.iter());
    let prob = Problem { w: &w, z: &z, p, q, cond };
    let min = levenberg_marquardt(&prob, start, opts.max_iter)?;
    let m = n - cond;
    let sigma2 = min.sse / m as f64;
    let cov = covariance(&prob, &min.params, sigma2);
    let se: Vec<f64> = (0..min.params.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();

    let (e, _) = prob.residuals(&min.params, false);
    let fitted: Vec<f64> = (0..m).map(|i| w[cond + i] - e[i]).collect();
    let r2 = squared_correlation(&w[cond..], &fitted);
    let n_coef = min.params.len();
    let adj_r2 = 1.0 - (1.0 - r2) * (m as f64 - 1.0) / (m as f64 - n_coef as f64 - 1.0);
    let npar = (n_coef + 1) as f64;
    let loglik = -0.5 * m as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    let aic = -2.0 * loglik + 2.0 * npar;
    let aicc = aic + 2.0 * npar * (npar + 1.0) / (m as f64 - npar - 1.0);

    let phi = min.params[..p].to_vec();
    let theta = min.params[p..p + q].to_vec();
    let coef = min.params[p + q..].to_vec();
    let coef_se = se[p + q..].to_vec();
    let treatment_idx = reg
        .treatment
        .and_then(|t| names.iter().position(|c| *c == reg.names[t]));
    let (treatment_coef, treatment_se) = match treatment_idx {
        Some(i) => (coef[i], coef_se[i]),
        None => (f64::NAN, f64::NAN),
    };
    let drift = names.iter().position(|c| c == "drift").map(|i| coef[i]);
    Ok(ItsFit {
        model: ItsModel::ArimaCss,
        order,
        coef_names: names,
        coef,
        coef_se,
        ar_se: se[..p].to_vec(),
        ma_se: se[p..p + q].to_vec(),
        near_unit_root: max_inverse_root(&phi) > NEAR_UNIT_ROOT,
        ar: phi,
        ma: theta,
        drift,
        sigma2,
        loglik,
        aic,
        aicc,
        r2,
        adj_r2,
        treatment_coef,
        treatment_se,
        treatment_p: wald_p(treatment_coef, treatment_se),
        n_used: m,
        iterations: min.iterations,
        residuals: e.iter().copied().collect(),
    })
}

/// Two-sided normal p-value of `coef / se`.
pub fn wald_p(coef: f64, se: f64) -> f64 {
    if !(se > 0.0) || !coef.is_finite() {
        return f64::NAN;
    }
    let z = (coef / se).abs();
    2.0 * (1.0 - Normal::standard().cdf(z))
}

pub(crate) fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if saa == sbb { 1.0 } else { 0.0 };
    }
    sab * sab / (saa * sbb)
}
