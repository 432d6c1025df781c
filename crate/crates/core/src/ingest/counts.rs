use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};

use super::{Category, Classifier, IncidentRecord};
use crate::error::{Error, Result};

/// Gapless daily counts for one (city, category).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyCountSeries {
    pub city_id: String,
    pub category: Category,
    pub start: NaiveDate,
    pub counts: Vec<u64>,
}

impl DailyCountSeries {
    pub fn end(&self) -> NaiveDate {
        self.date_at(self.counts.len().saturating_sub(1))
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start + Days::new(index as u64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.counts.len()).map(|i| self.date_at(i))
    }

    /// Index of `date` if it lies inside the series.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.counts.len()).then_some(off as usize)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Keyed by (city, category); iteration order is deterministic.
pub type DailyCounts = BTreeMap<(String, Category), DailyCountSeries>;

/// Counts classified records per day inside `[start, end]`.
///
/// Returns the series and the number of records dated outside the window. A
/// series exists for every (city, category) with at least one in-window record.
pub fn build_daily_counts<'r>(
    records: impl IntoIterator<Item = &'r IncidentRecord>,
    classifier: &mut Classifier<'_>,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<(DailyCounts, usize)> {
    if start > end {
        return Err(Error::Invalid(format!("window start {start} is after end {end}")));
    }
    let days = (end - start).num_days() as usize + 1;
    let mut out = DailyCounts::new();
    let mut outside = 0usize;
    for rec in records {
        if rec.event_date < start || rec.event_date > end {
            outside += 1;
            continue;
        }
        let cat = classifier.classify(rec);
        let series = out
            .entry((rec.city_id.clone(), cat))
            .or_insert_with(|| DailyCountSeries {
                city_id: rec.city_id.clone(),
                category: cat,
                start,
                counts: vec![0; days],
            });
        series.counts[(rec.event_date - start).num_days() as usize] += 1;
    }
    Ok((out, outside))
}

/// Writes long-format `city,category,date,count`, one row per day.
pub fn write_daily_counts<W: Write>(writer: W, counts: &DailyCounts) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let ctx = "daily counts";
    w.write_record(["city", "category", "date", "count"])
        .map_err(|e| Error::csv(ctx, e))?;
    for s in counts.values() {
        for (date, n) in s.dates().zip(&s.counts) {
            w.write_record([
                s.city_id.as_str(),
                s.category.as_str(),
                &date.to_string(),
                &n.to_string(),
            ])
            .map_err(|e| Error::csv(ctx, e))?;
        }
    }
    w.flush().map_err(|e| Error::io("daily counts", e))?;
    Ok(())
}

/// Reads the long format written by [`write_daily_counts`]. Series must be gapless.
pub fn read_daily_counts<R: Read>(reader: R) -> Result<DailyCounts> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows: BTreeMap<(String, Category), Vec<(NaiveDate, u64)>> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::csv("daily counts", e))?;
        let bad = |what: &str| Error::Invalid(format!("daily counts row {}: bad {what}", i + 1));
        let city = row.get(0).ok_or_else(|| bad("city"))?.to_string();
        let cat: Category = row.get(1).ok_or_else(|| bad("category"))?.parse()?;
        let date = row
            .get(2)
            .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
            .ok_or_else(|| bad("date"))?;
        let n: u64 = row
            .get(3)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("count"))?;
        rows.entry((city, cat)).or_default().push((date, n));
    }
    let mut out = DailyCounts::new();
    for ((city, cat), mut days) in rows {
        days.sort_by_key(|d| d.0);
        let start = days[0].0;
        for (k, (d, _)) in days.iter().enumerate() {
            if *d != start + Days::new(k as u64) {
                return Err(Error::Invalid(format!(
                    "daily counts for {city}/{cat} are not gapless near {d}"
                )));
            }
        }
        out.insert(
            (city.clone(), cat),
            DailyCountSeries {
                city_id: city,
                category: cat,
                start,
                counts: days.into_iter().map(|d| d.1).collect(),
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CategoryMap;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn rec(city: &str, date: NaiveDate, text: &str) -> IncidentRecord {
        IncidentRecord {
            city_id: city.into(),
            event_date: date,
            offense_text: vec![text.into()],
            agency_code: None,
        }
    }

    #[test]
    fn counts_by_day_with_zeros() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        let recs = [
            rec("Boston", d(2019, 1, 3), "ROBBERY"),
            rec("Boston", d(2019, 1, 3), "ROBBERY,BANK"),
        ];
        let (counts, outside) = build_daily_counts(&recs, &mut c, d(2019, 1, 1), d(2019, 1, 31)).unwrap();
        assert_eq!(outside, 0);
        let s = &counts[&("Boston".to_string(), Category::Robbery)];
        assert_eq!(s.counts.len(), 31);
        assert_eq!(s.counts[2], 2);
        assert_eq!(s.total(), 2);
    }

    #[test]
    fn empty_stream_gives_empty_set() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        let (counts, _) = build_daily_counts(&[], &mut c, d(2019, 1, 1), d(2019, 1, 31)).unwrap();
        assert!(counts.is_empty());
    }

    #[test]
    fn out_of_window_excluded() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        let recs = [
            rec("Boston", d(2019, 1, 3), "ROBBERY"),
            rec("Boston", d(2019, 2, 3), "ROBBERY"),
        ];
        let (counts, outside) = build_daily_counts(&recs, &mut c, d(2019, 1, 1), d(2019, 1, 31)).unwrap();
        assert_eq!(outside, 1);
        assert_eq!(counts.values().map(|s| s.total()).sum::<u64>(), 1);
    }

    #[test]
    fn reversed_window_rejected() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        assert!(build_daily_counts(&[], &mut c, d(2019, 2, 1), d(2019, 1, 1)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        let recs = [
            rec("A", d(2019, 1, 3), "ROBBERY"),
            rec("B", d(2019, 1, 5), "BURGLARY"),
            rec("B", d(2019, 1, 5), "KIDNAPPING"),
        ];
        let (counts, _) = build_daily_counts(&recs, &mut c, d(2019, 1, 1), d(2019, 1, 10)).unwrap();
        let mut buf = Vec::new();
        write_daily_counts(&mut buf, &counts).unwrap();
        let back = read_daily_counts(buf.as_slice()).unwrap();
        assert_eq!(back, counts);
    }

    #[test]
    fn gap_rejected_on_read() {
        let text = "city,category,date,count\nA,theft,2019-01-01,1\nA,theft,2019-01-03,1\n";
        assert!(read_daily_counts(text.as_bytes()).is_err());
    }
}
