//! Placebo inference: unit placebos, empirical p-values, percentile bounds,
//! Holm-Šidák adjustment, and in-time / early roll-in re-runs.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::rms;
use crate::panel::{Panel, PanelSource, Window, DEFAULT_MIN_PRE_BLOCKS};
use crate::synth::{fit_synth, SynthFit, SynthOptions};

pub const DEFAULT_SCREENING_FACTOR: f64 = 7.5;
pub const MAX_HYPOTHESES: usize = 64;

/// Smallest treated pre-RMSE used by the screen, relative to the RMS of the
/// treated pre-period series. Keeps exact fits from screening out every placebo
/// on rounding noise.
const SCREEN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    OneSidedUpper,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceOptions {
    pub synth: SynthOptions,
    pub screening_factor: f64,
    /// Let the originally treated unit serve as a donor in placebo fits.
    pub include_treated_in_pool: bool,
    pub sidedness: Sidedness,
    pub min_pre_blocks: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            synth: SynthOptions::default(),
            screening_factor: DEFAULT_SCREENING_FACTOR,
            include_treated_in_pool: false,
            sidedness: Sidedness::OneSidedUpper,
            min_pre_blocks: DEFAULT_MIN_PRE_BLOCKS,
        }
    }
}

impl InferenceOptions {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if !(self.screening_factor > 0.0) {
            return Err(Error::Invalid(format!(
                "screening_factor must be positive, got {}",
                self.screening_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboEntry {
    pub unit: String,
    pub pre_rmse: f64,
    pub ate: f64,
    pub rmse_ratio: f64,
    pub lambda: f64,
    pub screened: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboDistribution {
    /// Sorted by unit id.
    pub entries: Vec<PlaceboEntry>,
    pub screening_factor: f64,
    /// Pre-RMSE above which a placebo is screened out.
    pub screen_threshold: f64,
    pub treated: SynthFit,
    pub n_retained: usize,
}

impl PlaceboDistribution {
    pub fn retained(&self) -> impl Iterator<Item = &PlaceboEntry> {
        self.entries.iter().filter(|e| !e.screened)
    }

    /// Mean pre-RMSE of the retained placebos.
    pub fn avg_placebo_pre_rmse(&self) -> f64 {
        self.retained().map(|e| e.pre_rmse).sum::<f64>() / self.n_retained as f64
    }

    /// Re-applies the screen with a different factor.
    pub fn rescreen(&self, factor: f64) -> Result<PlaceboDistribution> {
        let threshold = screen_threshold(&self.treated, factor);
        let entries: Vec<PlaceboEntry> = self
            .entries
            .iter()
            .map(|e| PlaceboEntry {
                screened: e.pre_rmse > threshold,
                ..e.clone()
            })
            .collect();
        finish(entries, factor, threshold, self.treated.clone())
    }
}

fn screen_threshold(treated: &SynthFit, factor: f64) -> f64 {
    let cf = &treated.counterfactual;
    let floor = SCREEN_FLOOR * rms(&cf.observed[..cf.t0]);
    factor * treated.effect.pre_rmse.max(floor)
}

fn finish(
    entries: Vec<PlaceboEntry>,
    factor: f64,
    threshold: f64,
    treated: SynthFit,
) -> Result<PlaceboDistribution> {
    let n_retained = entries.iter().filter(|e| !e.screened).count();
    if n_retained == 0 {
        return Err(Error::AllPlacebosScreened { factor });
    }
    Ok(PlaceboDistribution {
        entries,
        screening_factor: factor,
        screen_threshold: threshold,
        treated,
        n_retained,
    })
}

/// Fits the treated unit, then every donor in turn as a placebo treated unit
/// (penalty re-tuned each time) and screens placebos on pre-period fit.
pub fn unit_placebos(panel: &Panel, opts: &InferenceOptions) -> Result<PlaceboDistribution> {
    opts.validate()?;
    if panel.n_donors() < 3 {
        return Err(Error::Invalid(format!(
            "placebo inference needs at least 3 donors, panel has {}",
            panel.n_donors()
        )));
    }
    let treated = fit_synth(panel, &opts.synth)?;
    let exclude: Vec<usize> = if opts.include_treated_in_pool { vec![] } else { vec![0] };
    let fits: Vec<Result<PlaceboEntry>> = (1..panel.n_units())
        .into_par_iter()
        .map(|d| {
            let placebo = panel.with_treated(d, &exclude)?;
            let fit = fit_synth(&placebo, &opts.synth)?;
            Ok(PlaceboEntry {
                unit: panel.units()[d].clone(),
                pre_rmse: fit.effect.pre_rmse,
                ate: fit.effect.ate_per_capita,
                rmse_ratio: fit.effect.rmse_ratio,
                lambda: fit.solution.lambda,
                screened: false,
            })
        })
        .collect();
    let threshold = screen_threshold(&treated, opts.screening_factor);
    let mut entries = fits.into_iter().collect::<Result<Vec<_>>>()?;
    for e in &mut entries {
        e.screened = e.pre_rmse > threshold;
    }
    entries.sort_by(|a, b| a.unit.cmp(&b.unit));
    finish(entries, opts.screening_factor, threshold, treated)
}

/// Share of retained placebo ATEs at least as extreme as `tau_hat`.
pub fn p_value_ate(dist: &PlaceboDistribution, tau_hat: f64, sidedness: Sidedness) -> f64 {
    let hits = dist
        .retained()
        .filter(|e| match sidedness {
            Sidedness::OneSidedUpper => e.ate >= tau_hat,
            Sidedness::TwoSided => e.ate.abs() >= tau_hat.abs(),
        })
        .count();
    hits as f64 / dist.n_retained as f64
}

/// Share of retained placebo RMSE ratios at least `r_treated`.
pub fn p_value_rmse(dist: &PlaceboDistribution, r_treated: f64) -> f64 {
    let hits = dist.retained().filter(|e| e.rmse_ratio >= r_treated).count();
    hits as f64 / dist.n_retained as f64
}

/// Percentile with linear interpolation between order statistics
/// (position `(n - 1) * pct / 100` in the sorted sample).
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * pct / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bounds of the retained placebo ATEs.
pub fn effect_bounds(dist: &PlaceboDistribution, low_pct: f64, high_pct: f64) -> Result<(f64, f64)> {
    if !(0.0..=100.0).contains(&low_pct) || !(0.0..=100.0).contains(&high_pct) || low_pct > high_pct {
        return Err(Error::Invalid(format!("bad percentile pair ({low_pct}, {high_pct})")));
    }
    let mut ates: Vec<f64> = dist.retained().map(|e| e.ate).collect();
    ates.sort_by(f64::total_cmp);
    Ok((percentile(&ates, low_pct), percentile(&ates, high_pct)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub unit: String,
    pub ate_per_capita: f64,
    pub ate_per_1000: f64,
    pub ate_events: f64,
    pub rmse_ratio: f64,
    pub p_ate: f64,
    pub p_rmse: f64,
    pub sidedness: Sidedness,
    pub bounds_5_95: (f64, f64),
    pub pre_r2: f64,
    pub pre_rmse: f64,
    pub avg_placebo_pre_rmse: f64,
    pub n_retained: usize,
    pub lambda: f64,
}

pub fn test_report(dist: &PlaceboDistribution, sidedness: Sidedness) -> Result<TestReport> {
    let fit = &dist.treated;
    let effect = &fit.effect;
    Ok(TestReport {
        unit: fit.counterfactual.unit.clone(),
        ate_per_capita: effect.ate_per_capita,
        ate_per_1000: effect.ate_per_1000,
        ate_events: effect.ate_events,
        rmse_ratio: effect.rmse_ratio,
        p_ate: p_value_ate(dist, effect.ate_per_capita, sidedness),
        p_rmse: p_value_rmse(dist, effect.rmse_ratio),
        sidedness,
        bounds_5_95: effect_bounds(dist, 5.0, 95.0)?,
        pre_r2: fit.solution.pre_r2,
        pre_rmse: effect.pre_rmse,
        avg_placebo_pre_rmse: dist.avg_placebo_pre_rmse(),
        n_retained: dist.n_retained,
        lambda: fit.solution.lambda,
    })
}

/// Full placebo analysis of one panel.
pub fn analyze(panel: &Panel, opts: &InferenceOptions) -> Result<(PlaceboDistribution, TestReport)> {
    let dist = unit_placebos(panel, opts)?;
    let report = test_report(&dist, opts.sidedness)?;
    Ok((dist, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    FailToReject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedPValues {
    pub alpha: f64,
    pub raw: BTreeMap<String, f64>,
    pub adjusted: BTreeMap<String, f64>,
    pub decisions: BTreeMap<String, Decision>,
}

/// `1 - (1 - p)^k` without cancellation for small `p`.
fn sidak(p: f64, k: usize) -> f64 {
    -(k as f64 * (-p).ln_1p()).exp_m1()
}

/// Holm step-down adjustment with Šidák factors.
pub fn holm_sidak(raw: &BTreeMap<String, f64>, alpha: f64) -> Result<AdjustedPValues> {
    let m = raw.len();
    if m == 0 || m > MAX_HYPOTHESES {
        return Err(Error::Invalid(format!(
            "Holm-Šidák needs 1..={MAX_HYPOTHESES} hypotheses, got {m}"
        )));
    }
    if let Some(&p) = raw.values().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::PValueRange(p));
    }
    let mut order: Vec<(&String, f64)> = raw.iter().map(|(k, v)| (k, *v)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let mut adjusted = BTreeMap::new();
    let mut decisions = BTreeMap::new();
    let mut running = 0.0f64;
    for (i, (name, p)) in order.into_iter().enumerate() {
        running = running.max(sidak(p, m - i)).clamp(0.0, 1.0);
        adjusted.insert(name.clone(), running);
        let d = if running <= alpha {
            Decision::Reject
        } else {
            Decision::FailToReject
        };
        decisions.insert(name.clone(), d);
    }
    Ok(AdjustedPValues {
        alpha,
        raw: raw.clone(),
        adjusted,
        decisions,
    })
}

/// Result of a re-run with a shifted intervention date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftedRun {
    pub date: NaiveDate,
    pub t0: usize,
    pub t: usize,
    pub report: TestReport,
}

fn shifted(source: &dyn PanelSource, window: Window, opts: &InferenceOptions) -> Result<ShiftedRun> {
    let panel = source.build(&window, opts.min_pre_blocks)?;
    let (_, report) = analyze(&panel, opts)?;
    Ok(ShiftedRun {
        date: window.intervention,
        t0: panel.t0(),
        t: panel.t(),
        report,
    })
}

/// Truncates the data before the true intervention and treats
/// `[pseudo, true intervention)` as the post period.
pub fn in_time_placebo(
    source: &dyn PanelSource,
    pseudo_intervention: NaiveDate,
    opts: &InferenceOptions,
) -> Result<ShiftedRun> {
    let w = source.primary_window();
    if pseudo_intervention >= w.intervention || pseudo_intervention <= w.start {
        return Err(Error::Invalid(format!(
            "pseudo intervention {pseudo_intervention} must fall inside the pre-period ({} .. {})",
            w.start, w.intervention
        )));
    }
    let window = Window {
        start: w.start,
        intervention: pseudo_intervention,
        end: w.intervention - Days::new(1),
    };
    shifted(source, window, opts)
}

/// Keeps the full window but starts the post period at `early_start`.
pub fn early_rollin(source: &dyn PanelSource, early_start: NaiveDate, opts: &InferenceOptions) -> Result<ShiftedRun> {
    let w = source.primary_window();
    if early_start > w.intervention || early_start <= w.start {
        return Err(Error::Invalid(format!(
            "early start {early_start} must fall in ({} ..= {}]",
            w.start, w.intervention
        )));
    }
    shifted(
        source,
        Window {
            intervention: early_start,
            ..w
        },
        opts,
    )
}

pub fn default_in_time_dates() -> Vec<NaiveDate> {
    [(2019, 1, 1), (2019, 3, 1), (2019, 6, 1)]
        .iter()
        .map(|&(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap())
        .collect()
}

pub fn default_early_rollin_dates() -> Vec<NaiveDate> {
    [(2019, 9, 1), (2019, 10, 1), (2019, 11, 1)]
        .iter()
        .map(|&(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap())
        .collect()
}
