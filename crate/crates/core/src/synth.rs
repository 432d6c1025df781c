//! Ridge-penalized synthetic control.
//!
//! For treated series `y` and donor matrix `X` over the pre-period the weight
//! program is
//!
//! ```text
//! minimize (1/T0) * sum_t (y_t - c - X_t w)^2 + lambda * |w|^2   subject to sum(w) = 1
//! ```
//!
//! with an unpenalized intercept `c`. Centering removes `c`; writing
//! `w = 1/J + Z v` with `Z` an orthonormal basis of the sum-zero subspace turns
//! the constrained problem into an unconstrained ridge problem in `v`, which is
//! solved through one eigendecomposition shared by every penalty on the tuning grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{rms, sum_zero_basis};
use crate::panel::{Panel, DISPLAY_PER};

pub const LAMBDA_MIN: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 1e-2;
pub const LAMBDA_GRID_SIZE: usize = 100;
pub const TRAIN_FRACTION: f64 = 0.8;
/// Grid extensions allowed on each side when the optimum sits on a boundary.
pub const MAX_GRID_EXPANSIONS: usize = 4;
/// Decades added per extension.
const EXPANSION_DECADES: f64 = 2.0;

/// Eigenvalues of the reduced Gram matrix below this fraction of the centered
/// donor energy are treated as exact zeros.
const EIG_TOL: f64 = 1e-11;

/// How the penalty is scaled against the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// `lambda` is used as given.
    Absolute,
    /// `lambda` is multiplied by the mean square of the centered donor data on
    /// the fitting segment, which makes the fit invariant to rescaling the panel.
    #[default]
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub grid_size: usize,
    pub train_fraction: f64,
    pub penalty_scale: PenaltyScale,
    /// Skip tuning and use this penalty.
    pub fixed_lambda: Option<f64>,
    /// How many times the grid may be extended past a boundary optimum.
    pub max_expansions: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            lambda_min: LAMBDA_MIN,
            lambda_max: LAMBDA_MAX,
            grid_size: LAMBDA_GRID_SIZE,
            train_fraction: TRAIN_FRACTION,
            penalty_scale: PenaltyScale::Relative,
            fixed_lambda: None,
            max_expansions: MAX_GRID_EXPANSIONS,
        }
    }
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda grid bounds must satisfy 0 < min <= max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.grid_size < 1 {
            return Err(Error::Invalid("lambda grid needs at least one point".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Invalid(format!("fixed_lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Log-spaced penalty grid, endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        lambda_grid(self.lambda_min, self.lambda_max, self.grid_size)
    }
}

pub fn lambda_grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![min];
    }
    let (a, b) = (min.log10(), max.log10());
    (0..n)
        .map(|k| {
            if k == n - 1 {
                max
            } else {
                10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSolution {
    /// Donor ids in panel order.
    pub donors: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Penalty as requested (before any relative scaling).
    pub lambda: f64,
    pub pre_rmse: f64,
    pub pre_r2: f64,
    /// Held-out RMSE at `lambda` when the penalty was tuned.
    pub validation_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningTrace {
    pub lambdas: Vec<f64>,
    pub validation_rmse: Vec<f64>,
    pub best: usize,
    pub fit_blocks: usize,
    pub validation_blocks: usize,
    pub at_boundary: bool,
}

impl TuningTrace {
    pub fn best_lambda(&self) -> f64 {
        self.lambdas[self.best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualSeries {
    pub unit: String,
    pub population: f64,
    pub t0: usize,
    pub predicted: Vec<f64>,
    pub observed: Vec<f64>,
}

impl CounterfactualSeries {
    pub fn residuals(&self) -> Vec<f64> {
        self.observed.iter().zip(&self.predicted).map(|(o, p)| o - p).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub ate_per_capita: f64,
    pub ate_per_1000: f64,
    pub ate_events: f64,
    pub rmse_ratio: f64,
    pub pre_rmse: f64,
    pub post_rmse: f64,
    /// Set when the pre-period fit is exact and `rmse_ratio` is reported as infinity.
    pub ratio_undefined: bool,
}

/// Centered pre-period data of one fit, reduced to the sum-zero subspace.
///
/// With `A = X̃ Z / sqrt(n)` and `r = (ỹ - X̃ w0) / sqrt(n)`, the reduced
/// problem is `min |A v - r|^2 + lambda |v|^2`. `AᵀA = Q Λ Qᵀ` is computed once
/// so every penalty on a grid costs one small matrix-vector product.
struct Reduced {
    n_donors: usize,
    x_mean: DVector<f64>,
    y_mean: f64,
    z: DMatrix<f64>,
    q: DMatrix<f64>,
    eig: Vec<f64>,
    /// `Qᵀ Aᵀ r`.
    qtg: DVector<f64>,
    /// Eigenvalues at or below this are exact zeros up to rounding.
    cutoff: f64,
    /// Mean square of centered donor entries.
    data_scale: f64,
    rank: usize,
}

impl Reduced {
    /// `y`: treated outcomes; `x`: donors (columns) over the same rows.
    fn new(y: &[f64], x: &DMatrix<f64>) -> Self {
        let (n, j) = x.shape();
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let x_mean = DVector::from_fn(j, |c, _| x.column(c).sum() / nf);
        let sqrt_n = nf.sqrt();
        let xc = DMatrix::from_fn(n, j, |r, c| (x[(r, c)] - x_mean[c]) / sqrt_n);
        let w0 = 1.0 / j as f64;
        let resid0 = DVector::from_fn(n, |r, _| {
            (y[r] - y_mean) / sqrt_n - xc.row(r).iter().map(|v| v * w0).sum::<f64>()
        });
        let z = sum_zero_basis(j);
        let a = &xc * &z;
        let m = a.transpose() * &a;
        let se = m.symmetric_eigen();
        let eig: Vec<f64> = se.eigenvalues.iter().copied().collect();
        let q = se.eigenvectors;
        let qtg = q.transpose() * (a.transpose() * resid0);
        let data_scale = xc.norm_squared() / j as f64;
        // Reference is the centered donor energy, an upper bound on trace(AᵀA),
        // so a Gram matrix made only of rounding noise is recognised as zero.
        let cutoff = EIG_TOL * xc.norm_squared();
        let rank = eig.iter().filter(|e| **e > cutoff).count();
        Self {
            n_donors: j,
            x_mean,
            y_mean,
            z,
            q,
            eig,
            qtg,
            cutoff,
            data_scale,
            rank,
        }
    }

    fn effective_lambda(&self, lambda: f64, scale: PenaltyScale) -> f64 {
        match scale {
            PenaltyScale::Absolute => lambda,
            PenaltyScale::Relative => lambda * self.data_scale,
        }
    }

    /// Weights (in the column order of `x`) and intercept.
    fn solve(&self, lambda: f64, scale: PenaltyScale) -> Result<(Vec<f64>, f64)> {
        let lam = self.effective_lambda(lambda, scale);
        if lam <= 0.0 && self.rank < self.n_donors - 1 {
            return Err(Error::SingularWeights { lambda });
        }
        // Aᵀr has no component along the null space of AᵀA, so those
        // directions are zero for every penalty.
        let coef = DVector::from_fn(self.eig.len(), |i, _| {
            if self.eig[i] > self.cutoff {
                self.qtg[i] / (self.eig[i] + lam)
            } else {
                0.0
            }
        });
        let dw = &self.z * (&self.q * coef);
        let w0 = 1.0 / self.n_donors as f64;
        let w: Vec<f64> = dw.iter().map(|d| w0 + d).collect();
        let c = self.y_mean - self.x_mean.iter().zip(&w).map(|(m, w)| m * w).sum::<f64>();
        Ok((w, c))
    }
}

/// Donor columns ordered by unit id, so results do not depend on panel column order.
fn sorted_donors(panel: &Panel) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..panel.n_units()).collect();
    idx.sort_by(|a, b| panel.units()[*a].cmp(&panel.units()[*b]));
    idx
}

fn donor_block(panel: &Panel, cols: &[usize], rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let y = panel.y();
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| y[(rows.start + r, cols[c])])
}

fn predict_rows(panel: &Panel, cols: &[usize], w: &[f64], c: f64, rows: std::ops::Range<usize>) -> Vec<f64> {
    let y = panel.y();
    rows.map(|t| {
        let mut acc = c;
        for (k, &j) in cols.iter().enumerate() {
            acc += w[k] * y[(t, j)];
        }
        acc
    })
    .collect()
}

fn check_panel(panel: &Panel) -> Result<()> {
    if panel.n_donors() < 2 {
        return Err(Error::Invalid(format!(
            "synthetic control needs at least 2 donors, panel has {}",
            panel.n_donors()
        )));
    }
    Ok(())
}

/// Solves the weight program on the full pre-period with absolute penalty `lambda`.
pub fn solve_weights(panel: &Panel, lambda: f64) -> Result<WeightSolution> {
    solve_weights_scaled(panel, lambda, PenaltyScale::Absolute)
}

pub fn solve_weights_scaled(panel: &Panel, lambda: f64, scale: PenaltyScale) -> Result<WeightSolution> {
    check_panel(panel)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let t0 = panel.t0();
    let cols = sorted_donors(panel);
    let treated = panel.series(0);
    let reduced = Reduced::new(&treated[..t0], &donor_block(panel, &cols, 0..t0));
    let (w_sorted, c) = reduced.solve(lambda, scale)?;
    let fitted = predict_rows(panel, &cols, &w_sorted, c, 0..t0);
    let resid: Vec<f64> = treated[..t0].iter().zip(&fitted).map(|(o, p)| o - p).collect();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let sst: f64 = treated[..t0].iter().map(|v| v * v).sum();
    let pre_r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let mut weights = vec![0.0; cols.len()];
    for (k, &j) in cols.iter().enumerate() {
        weights[j - 1] = w_sorted[k];
    }
    Ok(WeightSolution {
        donors: panel.units()[1..].to_vec(),
        weights,
        intercept: c,
        lambda,
        pre_rmse: rms(&resid),
        pre_r2,
        validation_rmse: None,
    })
}

/// Tunes the penalty over the fixed default grid, without boundary extension.
pub fn tune_lambda(panel: &Panel) -> Result<(f64, TuningTrace)> {
    tune_lambda_with(
        panel,
        &SynthOptions {
            max_expansions: 0,
            ..SynthOptions::default()
        },
    )
}

/// Fits on the first `floor(train_fraction * T0)` pre blocks for every grid
/// value and scores RMSE on the remaining pre blocks. Ties keep the smaller penalty.
/// A boundary optimum extends the grid by two decades on that side, up to
/// `max_expansions` times; a warning is logged if it still ends on an edge.
pub fn tune_lambda_with(panel: &Panel, opts: &SynthOptions) -> Result<(f64, TuningTrace)> {
    check_panel(panel)?;
    opts.validate()?;
    let t0 = panel.t0();
    let n_fit = (opts.train_fraction * t0 as f64).floor() as usize;
    if n_fit < 2 || n_fit >= t0 {
        return Err(Error::Invalid(format!(
            "cannot split {t0} pre blocks into fitting and validation segments"
        )));
    }
    if t0 < 10 {
        log::warn!("tuning lambda on only {t0} pre blocks");
    }
    let cols = sorted_donors(panel);
    let treated = panel.series(0);
    let reduced = Reduced::new(&treated[..n_fit], &donor_block(panel, &cols, 0..n_fit));
    let score = |lambda: f64| -> Result<f64> {
        let (w, c) = reduced.solve(lambda, opts.penalty_scale)?;
        let pred = predict_rows(panel, &cols, &w, c, n_fit..t0);
        let resid: Vec<f64> = treated[n_fit..t0].iter().zip(&pred).map(|(o, p)| o - p).collect();
        Ok(rms(&resid))
    };
    let mut lambdas = opts.grid();
    let mut scores = lambdas.iter().map(|&l| score(l)).collect::<Result<Vec<f64>>>()?;
    let mut best = argmin(&scores);
    if lambdas.len() > 1 {
        // Extend the grid with the same log spacing while the optimum is on an edge.
        let step = (opts.lambda_max.log10() - opts.lambda_min.log10()) / (lambdas.len() - 1) as f64;
        let per_side = if step > 0.0 { (EXPANSION_DECADES / step).round().max(1.0) as usize } else { 0 };
        let (mut low, mut high) = (0, 0);
        loop {
            if best == 0 && low < opts.max_expansions && per_side > 0 {
                let a = lambdas[0].log10();
                let ext: Vec<f64> = (1..=per_side).rev().map(|k| 10f64.powf(a - step * k as f64)).collect();
                let ext_scores = ext.iter().map(|&l| score(l)).collect::<Result<Vec<f64>>>()?;
                lambdas.splice(0..0, ext);
                scores.splice(0..0, ext_scores);
                low += 1;
            } else if best == lambdas.len() - 1 && high < opts.max_expansions && per_side > 0 {
                let b = lambdas[lambdas.len() - 1].log10();
                let ext: Vec<f64> = (1..=per_side).map(|k| 10f64.powf(b + step * k as f64)).collect();
                for &l in &ext {
                    scores.push(score(l)?);
                }
                lambdas.extend(ext);
                high += 1;
            } else {
                break;
            }
            best = argmin(&scores);
        }
    }
    let at_boundary = lambdas.len() > 1 && (best == 0 || best == lambdas.len() - 1);
    if at_boundary {
        log::warn!(
            "optimal lambda {:e} for {} lies on the grid boundary [{:e}, {:e}]",
            lambdas[best],
            panel.treated_unit(),
            lambdas[0],
            lambdas[lambdas.len() - 1]
        );
    }
    let trace = TuningTrace {
        lambdas,
        validation_rmse: scores,
        best,
        fit_blocks: n_fit,
        validation_blocks: t0 - n_fit,
        at_boundary,
    };
    Ok((trace.best_lambda(), trace))
}

/// First index of the smallest value.
fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in xs.iter().enumerate() {
        if *s < xs[best] {
            best = k;
        }
    }
    best
}

/// `predicted[t] = c + sum_j w_j Y_jt` over all blocks.
pub fn predict_counterfactual(panel: &Panel, solution: &WeightSolution) -> CounterfactualSeries {
    let cols = sorted_donors(panel);
    let w: Vec<f64> = cols.iter().map(|&j| solution.weights[j - 1]).collect();
    CounterfactualSeries {
        unit: panel.treated_unit().to_string(),
        population: panel.populations()[0],
        t0: panel.t0(),
        predicted: predict_rows(panel, &cols, &w, solution.intercept, 0..panel.t()),
        observed: panel.series(0),
    }
}

/// Average post-period gap and post/pre RMSE ratio.
pub fn estimate_ate(series: &CounterfactualSeries, t0: usize) -> EffectEstimate {
    let resid = series.residuals();
    assert!(t0 >= 1 && t0 < resid.len(), "need 1 <= T0 < T");
    let post = &resid[t0..];
    let ate = post.iter().sum::<f64>() / post.len() as f64;
    let pre_rmse = rms(&resid[..t0]);
    let post_rmse = rms(post);
    let ratio_undefined = pre_rmse == 0.0;
    EffectEstimate {
        ate_per_capita: ate,
        ate_per_1000: ate * DISPLAY_PER,
        ate_events: ate * series.population,
        rmse_ratio: if ratio_undefined {
            f64::INFINITY
        } else {
            post_rmse / pre_rmse
        },
        pre_rmse,
        post_rmse,
        ratio_undefined,
    }
}

/// Converts a per-capita effect into events per block.
pub fn to_events(ate_per_capita: f64, population: f64) -> Result<f64> {
    if !(population > 0.0 && population.is_finite()) {
        return Err(Error::BadPopulation {
            unit: String::new(),
            population,
        });
    }
    Ok(ate_per_capita * population)
}

/// Tuning, final fit, counterfactual and effect for one treated unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthFit {
    pub solution: WeightSolution,
    pub tuning: Option<TuningTrace>,
    pub counterfactual: CounterfactualSeries,
    pub effect: EffectEstimate,
}

pub fn fit_synth(panel: &Panel, opts: &SynthOptions) -> Result<SynthFit> {
    opts.validate()?;
    let (lambda, tuning) = match opts.fixed_lambda {
        Some(l) => (l, None),
        None => {
            let (l, trace) = tune_lambda_with(panel, opts)?;
            (l, Some(trace))
        }
    };
    let mut solution = solve_weights_scaled(panel, lambda, opts.penalty_scale)?;
    solution.validation_rmse = tuning.as_ref().map(|t| t.validation_rmse[t.best]);
    let counterfactual = predict_counterfactual(panel, &solution);
    let effect = estimate_ate(&counterfactual, panel.t0());
    Ok(SynthFit {
        solution,
        tuning,
        counterfactual,
        effect,
    })
}
