use chrono::NaiveDate;

use super::DailyCountSeries;
use crate::error::{Error, Result};

pub const DEFAULT_DISCONTINUITY_THRESHOLD: f64 = 3.0;

const WINDOW: usize = 30;
const MIN_DAYS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discontinuity {
    pub flagged: bool,
    /// First day of the later window at the estimated changepoint.
    pub changepoint: Option<NaiveDate>,
    /// Later-window mean over earlier-window mean at the changepoint.
    pub ratio: Option<f64>,
}

fn ratio(later: f64, earlier: f64) -> f64 {
    match (later == 0.0, earlier == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => later / earlier,
    }
}

/// Screens a daily series for reporting level shifts.
///
/// At every boundary `b` the mean of the 30 days starting at `b` is compared
/// with the mean of the 30 days before it. A boundary is out of band when the
/// ratio leaves `[1/threshold, threshold]`. Out-of-band boundaries come in runs
/// around a level shift; the changepoint reported is the boundary with the
/// largest absolute log-ratio inside the first run (earliest on ties).
pub fn detect_reporting_discontinuity(
    series: &DailyCountSeries,
    threshold: f64,
) -> Result<Discontinuity> {
    let n = series.counts.len();
    if n < MIN_DAYS {
        return Err(Error::SeriesTooShort {
            unit: format!("{}/{}", series.city_id, series.category),
            len: n,
            min: MIN_DAYS,
        });
    }
    if !(threshold > 1.0) {
        return Err(Error::Invalid(format!(
            "discontinuity threshold must exceed 1, got {threshold}"
        )));
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for &c in &series.counts {
        prefix.push(prefix.last().unwrap() + c);
    }
    let mean = |from: usize| (prefix[from + WINDOW] - prefix[from]) as f64 / WINDOW as f64;

    let mut best: Option<(usize, f64, f64)> = None;
    for b in WINDOW..=n - WINDOW {
        let r = ratio(mean(b), mean(b - WINDOW));
        let out_of_band = r > threshold || r < 1.0 / threshold;
        if out_of_band {
            let score = r.ln().abs();
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((b, r, score)),
            }
        } else if best.is_some() {
            break;
        }
    }
    Ok(match best {
        Some((b, r, _)) => Discontinuity {
            flagged: true,
            changepoint: Some(series.date_at(b)),
            ratio: Some(r),
        },
        None => Discontinuity {
            flagged: false,
            changepoint: None,
            ratio: None,
        },
    })
}
