//! Per-outcome analysis and report tables.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use scpanel::inference::{
    analyze, early_rollin, holm_sidak, in_time_placebo, Decision, PlaceboDistribution, ShiftedRun, TestReport,
};
use scpanel::its::{
    build_design_matrix, fit_poisson_ar, its_report, select_and_fit, ItsFit, OrderSearch, Regressors,
};
use scpanel::panel::{Panel, DISPLAY_PER};
use scpanel::smooth::loess_smooth;
use scpanel::synth::{fit_synth, SynthFit};

use crate::bundle::{fixed, full, sci, Bundle, Table};
use crate::config::RunConfig;
use crate::sources::OutcomeData;

#[derive(Debug, Clone, Copy, Default)]
pub struct Stages {
    pub placebo: bool,
    pub its: bool,
    pub smooth: bool,
}

pub struct OutcomeResult {
    pub name: String,
    pub panel: Panel,
    pub fit: SynthFit,
    pub placebo: Option<(PlaceboDistribution, TestReport)>,
    pub in_time: Vec<ShiftedRun>,
    pub early: Vec<ShiftedRun>,
    pub its: Option<ItsFit>,
    pub smoothed: Option<Smoothed>,
    pub dropped: Vec<String>,
}

/// Display series (per 1000, demeaned) and their loess smooths.
pub struct Smoothed {
    pub observed: Vec<f64>,
    pub synthetic: Vec<f64>,
    pub observed_smooth: Vec<f64>,
    pub synthetic_smooth: Vec<f64>,
    pub gap_smooth: Vec<f64>,
}

pub fn its_fit(cfg: &RunConfig, name: &str, data: &OutcomeData) -> Result<ItsFit> {
    let its = cfg.its.as_ref().context("ITS not configured")?;
    let study = cfg.study.as_ref().context("ITS needs a [study] table")?;
    let daily = data.treated_daily().context("ITS needs daily incident counts")?;
    let dates: Vec<NaiveDate> = daily.dates().collect();
    let design = build_design_matrix(&dates, study.intervention_date, its.trend, &its.holidays)?;
    let reg = Regressors::from(&design);
    let fit = if its.poisson_outcomes.iter().any(|o| o == name) {
        fit_poisson_ar(&daily.counts, &reg, &its.poisson_lags)?
    } else {
        let y: Vec<f64> = daily.counts.iter().map(|&c| c as f64).collect();
        select_and_fit(&y, &reg, &OrderSearch::default())?.1
    };
    Ok(fit)
}

fn smooth(fit: &SynthFit, span: f64) -> Result<Smoothed> {
    let cf = &fit.counterfactual;
    let observed: Vec<f64> = cf.observed.iter().map(|v| v * DISPLAY_PER).collect();
    let synthetic: Vec<f64> = cf.predicted.iter().map(|v| v * DISPLAY_PER).collect();
    let gap: Vec<f64> = observed.iter().zip(&synthetic).map(|(o, s)| o - s).collect();
    Ok(Smoothed {
        observed_smooth: loess_smooth(&observed, span)?,
        synthetic_smooth: loess_smooth(&synthetic, span)?,
        gap_smooth: loess_smooth(&gap, span)?,
        observed,
        synthetic,
    })
}

pub fn analyze_outcome(cfg: &RunConfig, name: &str, data: &OutcomeData, stages: Stages) -> Result<OutcomeResult> {
    let opts = cfg.inference_options();
    let panel = data.panel()?;
    info!("{name}: {} units, T = {}, T0 = {}", panel.n_units(), panel.t(), panel.t0());
    let (fit, placebo) = if stages.placebo {
        let (dist, report) = analyze(&panel, &opts)?;
        (dist.treated.clone(), Some((dist, report)))
    } else {
        (fit_synth(&panel, &opts.synth)?, None)
    };
    let mut in_time = Vec::new();
    let mut early = Vec::new();
    if stages.placebo {
        for &d in &cfg.placebo_dates.in_time {
            in_time.push(in_time_placebo(data.source(), d, &opts).with_context(|| format!("in-time placebo at {d}"))?);
        }
        for &d in &cfg.placebo_dates.early_rollin {
            early.push(early_rollin(data.source(), d, &opts).with_context(|| format!("early roll-in at {d}"))?);
        }
    }
    let its = if stages.its && cfg.its.is_some() {
        Some(its_fit(cfg, name, data).context("ITS")?)
    } else {
        None
    };
    let smoothed = if stages.smooth {
        Some(smooth(&fit, cfg.smoothing.span)?)
    } else {
        None
    };
    let dropped = match data {
        OutcomeData::Daily { dropped, .. } => dropped.clone(),
        OutcomeData::Fixed(_) => Vec::new(),
    };
    Ok(OutcomeResult {
        name: name.to_string(),
        panel,
        fit,
        placebo,
        in_time,
        early,
        its,
        smoothed,
        dropped,
    })
}

/// Runs every loaded outcome (in parallel); failures are kept per outcome.
pub fn analyze_all(
    cfg: &RunConfig,
    data: &BTreeMap<String, Result<OutcomeData>>,
    stages: Stages,
) -> BTreeMap<String, Result<OutcomeResult>> {
    let items: Vec<(&String, &Result<OutcomeData>)> = data.iter().collect();
    items
        .into_par_iter()
        .map(|(name, d)| {
            let r = match d {
                Ok(d) => analyze_outcome(cfg, name, d, stages),
                Err(e) => Err(anyhow::anyhow!("{e:#}")),
            };
            (name.clone(), r)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn decision(d: Decision) -> &'static str {
    match d {
        Decision::Reject => "reject",
        Decision::FailToReject => "fail_to_reject",
    }
}

fn sidedness(r: &TestReport) -> &'static str {
    match r.sidedness {
        scpanel::inference::Sidedness::OneSidedUpper => "one_sided_upper",
        scpanel::inference::Sidedness::TwoSided => "two_sided",
    }
}

pub fn write_fit_tables(bundle: &mut Bundle, results: &[&OutcomeResult]) -> Result<()> {
    let header = ["outcome", "unit", "weight"];
    let mut display = Table::new(&header)?;
    let mut precise = Table::new(&header)?;
    for r in results {
        let sol = &r.fit.solution;
        for (unit, w) in sol.donors.iter().zip(&sol.weights) {
            display.row([r.name.as_str(), unit, &fixed(*w, 2)])?;
            precise.row([r.name.as_str(), unit, &full(*w)])?;
        }
        // intercept is on the per-capita scale; shown per 1000 in the display table
        display.row([r.name.as_str(), "(intercept)", &sci(sol.intercept * DISPLAY_PER)])?;
        precise.row([r.name.as_str(), "(intercept)", &full(sol.intercept)])?;
    }
    bundle.write("weights.csv", &display.into_bytes()?)?;
    bundle.write("weights_full.csv", &precise.into_bytes()?)?;

    for r in results {
        let cf = &r.fit.counterfactual;
        let mut t = Table::new(&["block_start", "post", "observed", "synthetic", "gap"])?;
        for (i, d) in r.panel.block_starts().iter().enumerate() {
            t.row([
                d.to_string(),
                u8::from(i >= cf.t0).to_string(),
                full(cf.observed[i]),
                full(cf.predicted[i]),
                full(cf.observed[i] - cf.predicted[i]),
            ])?;
        }
        bundle.write(&format!("series/{}.csv", r.name), &t.into_bytes()?)?;

        if let Some(trace) = &r.fit.tuning {
            let mut t = Table::new(&["lambda", "validation_rmse", "selected"])?;
            for (k, (l, v)) in trace.lambdas.iter().zip(&trace.validation_rmse).enumerate() {
                t.row([full(*l), full(*v), u8::from(k == trace.best).to_string()])?;
            }
            bundle.write(&format!("tuning/{}.csv", r.name), &t.into_bytes()?)?;
        }
    }
    Ok(())
}

pub fn write_placebo_tables(bundle: &mut Bundle, results: &[&OutcomeResult], alpha: f64) -> Result<()> {
    let with: Vec<(&OutcomeResult, &PlaceboDistribution, &TestReport)> = results
        .iter()
        .filter_map(|r| r.placebo.as_ref().map(|(d, t)| (*r, d, t)))
        .collect();

    let header = [
        "outcome",
        "unit",
        "ate_per_1000",
        "ate_events",
        "p_ate",
        "rmse_ratio",
        "p_rmse",
        "pre_rmse_per_1000",
        "placebo_pre_rmse_per_1000",
        "pre_r2",
        "lambda",
        "n_placebos",
        "sidedness",
    ];
    let mut display = Table::new(&header)?;
    let mut precise = Table::new(&header)?;
    for (r, _, t) in &with {
        display.row([
            r.name.clone(),
            t.unit.clone(),
            fixed(t.ate_per_1000, 4),
            fixed(t.ate_events, 1),
            fixed(t.p_ate, 2),
            fixed(t.rmse_ratio, 2),
            fixed(t.p_rmse, 2),
            sci(t.pre_rmse * DISPLAY_PER),
            sci(t.avg_placebo_pre_rmse * DISPLAY_PER),
            fixed(t.pre_r2, 2),
            sci(t.lambda),
            t.n_retained.to_string(),
            sidedness(t).into(),
        ])?;
        precise.row([
            r.name.clone(),
            t.unit.clone(),
            full(t.ate_per_1000),
            full(t.ate_events),
            full(t.p_ate),
            full(t.rmse_ratio),
            full(t.p_rmse),
            full(t.pre_rmse * DISPLAY_PER),
            full(t.avg_placebo_pre_rmse * DISPLAY_PER),
            full(t.pre_r2),
            full(t.lambda),
            t.n_retained.to_string(),
            sidedness(t).into(),
        ])?;
    }
    bundle.write("main.csv", &display.into_bytes()?)?;
    bundle.write("main_full.csv", &precise.into_bytes()?)?;

    let mut bounds = Table::new(&["outcome", "ate_per_1000", "p5_per_1000", "p95_per_1000"])?;
    for (r, _, t) in &with {
        bounds.row([
            r.name.clone(),
            full(t.ate_per_1000),
            full(t.bounds_5_95.0 * DISPLAY_PER),
            full(t.bounds_5_95.1 * DISPLAY_PER),
        ])?;
    }
    bundle.write("bounds.csv", &bounds.into_bytes()?)?;

    let mut adj = Table::new(&["statistic", "outcome", "p", "adjusted_p", "decision", "alpha"])?;
    if !with.is_empty() {
        for (stat, pick) in [("ate", 0usize), ("rmse_ratio", 1)] {
            let raw: BTreeMap<String, f64> = with
                .iter()
                .map(|(r, _, t)| (r.name.clone(), if pick == 0 { t.p_ate } else { t.p_rmse }))
                .collect();
            let a = holm_sidak(&raw, alpha)?;
            for (name, p) in &a.raw {
                adj.row([
                    stat.to_string(),
                    name.clone(),
                    full(*p),
                    full(a.adjusted[name]),
                    decision(a.decisions[name]).into(),
                    full(alpha),
                ])?;
            }
        }
    }
    bundle.write("adjusted_p.csv", &adj.into_bytes()?)?;

    let mut pl = Table::new(&["outcome", "unit", "pre_rmse_per_1000", "ate_per_1000", "rmse_ratio", "lambda", "screened"])?;
    for (r, d, _) in &with {
        for e in &d.entries {
            pl.row([
                r.name.clone(),
                e.unit.clone(),
                full(e.pre_rmse * DISPLAY_PER),
                full(e.ate * DISPLAY_PER),
                full(e.rmse_ratio),
                full(e.lambda),
                e.screened.to_string(),
            ])?;
        }
    }
    bundle.write("placebos.csv", &pl.into_bytes()?)?;

    for (file, pick) in [("in_time.csv", true), ("early_rollin.csv", false)] {
        let mut t = Table::new(&[
            "outcome",
            "date",
            "t0",
            "t",
            "ate_per_1000",
            "p_ate",
            "rmse_ratio",
            "p_rmse",
            "pre_rmse_per_1000",
            "n_placebos",
        ])?;
        for r in results {
            let runs = if pick { &r.in_time } else { &r.early };
            for s in runs {
                t.row([
                    r.name.clone(),
                    s.date.to_string(),
                    s.t0.to_string(),
                    s.t.to_string(),
                    full(s.report.ate_per_1000),
                    full(s.report.p_ate),
                    full(s.report.rmse_ratio),
                    full(s.report.p_rmse),
                    full(s.report.pre_rmse * DISPLAY_PER),
                    s.report.n_retained.to_string(),
                ])?;
            }
        }
        bundle.write(file, &t.into_bytes()?)?;
    }
    Ok(())
}

pub fn write_smoothed(bundle: &mut Bundle, results: &[&OutcomeResult]) -> Result<()> {
    for r in results {
        let Some(s) = &r.smoothed else { continue };
        let mut t = Table::new(&[
            "block_start",
            "post",
            "observed_per_1000",
            "synthetic_per_1000",
            "observed_smooth",
            "synthetic_smooth",
            "gap_smooth",
        ])?;
        for (i, d) in r.panel.block_starts().iter().enumerate() {
            t.row([
                d.to_string(),
                u8::from(i >= r.panel.t0()).to_string(),
                full(s.observed[i]),
                full(s.synthetic[i]),
                full(s.observed_smooth[i]),
                full(s.synthetic_smooth[i]),
                full(s.gap_smooth[i]),
            ])?;
        }
        bundle.write(&format!("smoothed/{}.csv", r.name), &t.into_bytes()?)?;
    }
    Ok(())
}

pub fn write_its(bundle: &mut Bundle, fits: &BTreeMap<String, ItsFit>, alpha: f64) -> Result<()> {
    let mut t = Table::new(&[
        "outcome",
        "model",
        "order",
        "treatment_coef",
        "treatment_se",
        "p",
        "adjusted_p",
        "decision",
        "sigma2",
        "aicc",
        "n_used",
        "near_unit_root",
    ])?;
    if !fits.is_empty() {
        let report = its_report(fits, alpha)?;
        for row in &report.rows {
            let f = &fits[&row.outcome];
            let model = match &row.model {
                scpanel::its::ItsModel::ArimaCss => "arima_css".to_string(),
                scpanel::its::ItsModel::PoissonAr { lags } => format!(
                    "poisson_ar[{}]",
                    lags.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")
                ),
            };
            t.row([
                row.outcome.clone(),
                model,
                row.order.to_string(),
                full(row.treatment_coef),
                full(row.treatment_se),
                full(row.p_value),
                full(row.adjusted_p),
                decision(report.adjustment.decisions[&row.outcome]).into(),
                full(f.sigma2),
                full(f.aicc),
                f.n_used.to_string(),
                f.near_unit_root.to_string(),
            ])?;
        }
    }
    bundle.write("its.csv", &t.into_bytes()?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct OutcomeStatus {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped_donors: Vec<String>,
}

pub fn statuses<T>(
    results: &BTreeMap<String, Result<T>>,
    dropped: impl Fn(&T) -> Vec<String>,
) -> BTreeMap<String, OutcomeStatus> {
    results
        .iter()
        .map(|(name, r)| {
            let s = match r {
                Ok(r) => OutcomeStatus {
                    status: "ok",
                    error: None,
                    dropped_donors: dropped(r),
                },
                Err(e) => OutcomeStatus {
                    status: "failed",
                    error: Some(format!("{e:#}")),
                    dropped_donors: Vec::new(),
                },
            };
            (name.clone(), s)
        })
        .collect()
}
