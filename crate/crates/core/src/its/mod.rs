//! Single-unit interrupted time series: segmented regression with ARIMA
//! errors, automatic order selection, and a Poisson autoregression for sparse
//! counts.

mod arima;
mod design;
mod poisson;
mod select;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{holm_sidak, AdjustedPValues};

pub use arima::{
    ar_is_stationary, difference, fit_arima_regression, fit_arima_regression_with, max_inverse_root, wald_p,
    FitOptions, NEAR_UNIT_ROOT,
};
pub use design::{build_design_matrix, default_holidays, HolidayCalendar, ItsDesignMatrix, TrendSpec};
pub use poisson::fit_poisson_ar;
pub use select::{kpss_statistic, select_and_fit, select_orders, OrderSearch, SelectionRecord, KPSS_CRITICAL_5PCT};

pub const MAX_ORDER: usize = 5;
pub const MAX_DIFF: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        let o = Self { p, d, q };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_ORDER || self.q > MAX_ORDER || self.d > MAX_DIFF {
            return Err(Error::Invalid(format!(
                "ARIMA({}, {}, {}) outside p, q <= {MAX_ORDER}, d <= {MAX_DIFF}",
                self.p, self.d, self.q
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

/// Regressor matrix with column names and the position of the treatment column.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressors {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub treatment: Option<usize>,
}

impl Regressors {
    pub fn new(x: DMatrix<f64>, names: Vec<String>, treatment: Option<usize>) -> Result<Self> {
        let r = Self { x, names, treatment };
        r.validate(r.x.nrows())?;
        Ok(r)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.x.nrows() != n {
            return Err(Error::Invalid(format!(
                "regressors have {} rows for {n} observations",
                self.x.nrows()
            )));
        }
        if self.names.len() != self.x.ncols() {
            return Err(Error::Invalid("one name per regressor column required".into()));
        }
        if matches!(self.treatment, Some(t) if t >= self.x.ncols()) {
            return Err(Error::Invalid("treatment column out of range".into()));
        }
        Ok(())
    }
}

impl From<&ItsDesignMatrix> for Regressors {
    fn from(m: &ItsDesignMatrix) -> Self {
        Self {
            x: m.x.clone(),
            names: m.names.clone(),
            treatment: Some(m.treatment),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ItsModel {
    ArimaCss,
    PoissonAr { lags: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItsFit {
    pub model: ItsModel,
    pub order: ArimaOrder,
    pub coef_names: Vec<String>,
    pub coef: Vec<f64>,
    pub coef_se: Vec<f64>,
    /// AR coefficients (lagged-response coefficients for the Poisson model).
    pub ar: Vec<f64>,
    pub ar_se: Vec<f64>,
    pub ma: Vec<f64>,
    pub ma_se: Vec<f64>,
    pub drift: Option<f64>,
    /// Innovation variance (Poisson model: Pearson dispersion).
    pub sigma2: f64,
    pub loglik: f64,
    pub aic: f64,
    pub aicc: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub treatment_coef: f64,
    pub treatment_se: f64,
    pub treatment_p: f64,
    pub near_unit_root: bool,
    pub n_used: usize,
    pub iterations: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItsReportRow {
    pub outcome: String,
    pub model: ItsModel,
    pub order: ArimaOrder,
    pub treatment_coef: f64,
    pub treatment_se: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItsReport {
    pub rows: Vec<ItsReportRow>,
    pub adjustment: AdjustedPValues,
}

/// Treatment coefficients across outcomes with Holm-Šidák adjusted p-values.
pub fn its_report(fits: &BTreeMap<String, ItsFit>, alpha: f64) -> Result<ItsReport> {
    let raw: BTreeMap<String, f64> = fits.iter().map(|(k, f)| (k.clone(), f.treatment_p)).collect();
    let adjustment = holm_sidak(&raw, alpha)?;
    let rows = fits
        .iter()
        .map(|(k, f)| ItsReportRow {
            outcome: k.clone(),
            model: f.model.clone(),
            order: f.order,
            treatment_coef: f.treatment_coef,
            treatment_se: f.treatment_se,
            p_value: f.treatment_p,
            adjusted_p: adjustment.adjusted[k],
        })
        .collect();
    Ok(ItsReport { rows, adjustment })
}
