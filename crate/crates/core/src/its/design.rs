//! Segmented-regression design matrices for daily series.

use std::collections::BTreeSet;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendSpec {
    #[default]
    LevelOnly,
    LevelAndSlope,
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u8) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, n).unwrap()
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .unwrap();
    let mut d = next - Days::new(1);
    while d.weekday() != weekday {
        d = d - Days::new(1);
    }
    d
}

/// US federal holidays on their calendar dates (not observed weekdays), plus Halloween.
pub fn default_holidays(year: i32) -> Vec<NaiveDate> {
    let ymd = |m, d| NaiveDate::from_ymd_opt(year, m, d).unwrap();
    let mut days = vec![
        ymd(1, 1),
        nth_weekday(year, 1, Weekday::Mon, 3),
        nth_weekday(year, 2, Weekday::Mon, 3),
        last_weekday(year, 5, Weekday::Mon),
        ymd(7, 4),
        nth_weekday(year, 9, Weekday::Mon, 1),
        nth_weekday(year, 10, Weekday::Mon, 2),
        ymd(10, 31),
        ymd(11, 11),
        nth_weekday(year, 11, Weekday::Thu, 4),
        ymd(12, 25),
    ];
    if year >= 2021 {
        days.push(ymd(6, 19));
    }
    days.sort();
    days
}

/// Holiday set used for the holiday dummy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolidayCalendar {
    /// Drop the built-in list and use `extra` only.
    pub replace_defaults: bool,
    pub extra: Vec<NaiveDate>,
}

impl HolidayCalendar {
    pub fn dates(&self, first: NaiveDate, last: NaiveDate) -> BTreeSet<NaiveDate> {
        let mut set: BTreeSet<NaiveDate> = self.extra.iter().copied().collect();
        if !self.replace_defaults {
            for y in first.year()..=last.year() {
                set.extend(default_holidays(y));
            }
        }
        set.retain(|d| *d >= first && *d <= last);
        set
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItsDesignMatrix {
    pub dates: Vec<NaiveDate>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub treatment: usize,
    pub slope: Option<usize>,
    /// Columns removed because they were constant zero or collinear with
    /// higher-priority columns.
    pub dropped: Vec<String>,
}

const WEEKDAYS: [(Weekday, &str); 6] = [
    (Weekday::Mon, "dow_mon"),
    (Weekday::Tue, "dow_tue"),
    (Weekday::Wed, "dow_wed"),
    (Weekday::Thu, "dow_thu"),
    (Weekday::Fri, "dow_fri"),
    (Weekday::Sat, "dow_sat"),
];

const MONTHS: [&str; 11] = [
    "month_jan", "month_feb", "month_mar", "month_apr", "month_may", "month_jun", "month_jul",
    "month_aug", "month_sep", "month_oct", "month_nov",
];

/// Keeps columns in order while they add rank (modified Gram-Schmidt).
fn independent_columns(cols: &[Vec<f64>]) -> Vec<bool> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    cols.iter()
        .map(|c| {
            let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                return false;
            }
            let mut r = c.clone();
            for b in &basis {
                let dot: f64 = r.iter().zip(b).map(|(a, b)| a * b).sum();
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= dot * bi;
                }
            }
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 * norm0 {
                basis.push(r.iter().map(|v| v / norm).collect());
                true
            } else {
                false
            }
        })
        .collect()
}

/// Builds the regression design for consecutive daily `dates` with an
/// intervention at `t_int` (first treated day).
///
/// Reference levels: Sunday, December, and the last year in the sample.
/// Columns that carry no information on this sample are dropped, giving
/// priority to intercept, treatment and slope.
pub fn build_design_matrix(
    dates: &[NaiveDate],
    t_int: NaiveDate,
    trend: TrendSpec,
    holidays: &HolidayCalendar,
) -> Result<ItsDesignMatrix> {
    let n = dates.len();
    if n < 2 {
        return Err(Error::Invalid("design needs at least two days".into()));
    }
    if dates.windows(2).any(|w| w[1] != w[0] + Days::new(1)) {
        return Err(Error::Invalid("design dates must be consecutive days".into()));
    }
    let (first, last) = (dates[0], dates[n - 1]);
    let hol = holidays.dates(first, last);
    let ind = |f: &dyn Fn(NaiveDate) -> bool| dates.iter().map(|d| f(*d) as u8 as f64).collect::<Vec<f64>>();

    let mut cols: Vec<(String, Vec<f64>)> = vec![
        ("intercept".into(), vec![1.0; n]),
        ("treatment".into(), ind(&|d| d >= t_int)),
    ];
    if trend == TrendSpec::LevelAndSlope {
        let slope = dates
            .iter()
            .map(|d| (*d - t_int).num_days().max(0) as f64)
            .collect();
        cols.push(("slope".into(), slope));
    }
    cols.push(("holiday".into(), ind(&|d| hol.contains(&d))));
    for (wd, name) in WEEKDAYS {
        cols.push((name.into(), ind(&|d| d.weekday() == wd)));
    }
    for (m, name) in MONTHS.iter().enumerate() {
        cols.push((name.to_string(), ind(&|d| d.month0() == m as u32)));
    }
    for y in first.year()..last.year() {
        cols.push((format!("year_{y}"), ind(&|d| d.year() == y)));
    }

    let values: Vec<Vec<f64>> = cols.iter().map(|(_, c)| c.clone()).collect();
    let keep = independent_columns(&values);
    if !keep[1] {
        return Err(Error::Invalid(format!(
            "intervention {t_int} leaves no pre or no post days in {first}..={last}"
        )));
    }
    let mut names = Vec::new();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for ((name, col), k) in cols.into_iter().zip(keep) {
        if k {
            names.push(name);
            kept.push(col);
        } else {
            dropped.push(name);
        }
    }
    let x = DMatrix::from_fn(n, kept.len(), |i, j| kept[j][i]);
    let slope = names.iter().position(|c| c == "slope");
    Ok(ItsDesignMatrix {
        dates: dates.to_vec(),
        x,
        names,
        treatment: 1,
        slope,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        (0..n).map(|k| start + Days::new(k as u64)).collect()
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn fortnight_weekday_counts() {
        // 2019-07-08 is a Monday
        let dates = days(d(2019, 7, 8), 14);
        let m = build_design_matrix(&dates, d(2019, 7, 15), TrendSpec::LevelOnly, &HolidayCalendar::default())
            .unwrap();
        for (_, name) in WEEKDAYS {
            let j = m.names.iter().position(|c| c == name).unwrap();
            assert_eq!(m.x.column(j).sum(), 2.0, "{name}");
        }
    }

    #[test]
    fn treatment_and_slope_columns() {
        let dates = days(d(2019, 12, 1), 60);
        let t_int = d(2020, 1, 1);
        let m = build_design_matrix(&dates, t_int, TrendSpec::LevelAndSlope, &HolidayCalendar::default()).unwrap();
        let after = dates.iter().filter(|x| **x >= t_int).count() as f64;
        assert_eq!(m.x.column(m.treatment).sum(), after);
        let i = dates.iter().position(|x| *x == t_int + Days::new(3)).unwrap();
        assert_eq!(m.x[(i, m.slope.unwrap())], 3.0);
        assert_eq!(m.x[(0, m.treatment)], 0.0);
    }

    #[test]
    fn full_rank_over_study_window() {
        let start = d(2017, 1, 1);
        let n = (d(2020, 3, 15) - start).num_days() as usize + 1;
        let dates = days(start, n);
        let m = build_design_matrix(&dates, d(2020, 1, 1), TrendSpec::LevelOnly, &HolidayCalendar::default())
            .unwrap();
        // treatment coincides with the 2020 year level, so one year dummy goes
        assert_eq!(m.names[1], "treatment");
        assert_eq!(m.dropped.len(), 1);
        let y = nalgebra::DVector::zeros(n);
        assert!(crate::linalg::least_squares(&m.x, &y).is_ok());
    }

    #[test]
    fn holiday_list() {
        let h = default_holidays(2019);
        for day in [d(2019, 1, 1), d(2019, 1, 21), d(2019, 5, 27), d(2019, 10, 31), d(2019, 11, 28), d(2019, 12, 25)] {
            assert!(h.contains(&day), "{day}");
        }
        assert!(!h.contains(&d(2019, 6, 19)));
        assert!(default_holidays(2021).contains(&d(2021, 6, 19)));
        let cal = HolidayCalendar {
            replace_defaults: false,
            extra: vec![d(2019, 3, 17)],
        };
        assert!(cal.dates(d(2019, 1, 1), d(2019, 12, 31)).contains(&d(2019, 3, 17)));
    }
}
