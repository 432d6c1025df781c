//! Incident files to daily per-city counts.
//!
//! Records are classified into the level-2 taxonomy by an ordered prefix rule
//! table ([`CategoryMap`]); anything without a rule lands in
//! [`Category::Unmapped`] so that coverage can be audited. Counts are taken as
//! reported: no cross-scheme hierarchy rule is re-applied.

mod counts;
mod discontinuity;
mod records;
mod taxonomy;

pub use counts::{build_daily_counts, read_daily_counts, write_daily_counts, DailyCountSeries, DailyCounts};
pub use discontinuity::{detect_reporting_discontinuity, Discontinuity, DEFAULT_DISCONTINUITY_THRESHOLD};
pub use records::{parse_incidents, read_incidents, DateFormat, IncidentRecord, IncidentSchema, ParseOutcome, RowError};
pub use taxonomy::{classify_incident, Category, CategoryMap, Classifier, Level1, Rule, RuleTarget};

use std::collections::BTreeMap;

/// Data-quality counters collected while ingesting.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct AuditReport {
    pub rows_read: usize,
    pub malformed_rows: usize,
    pub malformed_examples: Vec<String>,
    pub out_of_window: usize,
    /// Normalised descriptor text → number of records left unmapped.
    pub unmapped_descriptors: BTreeMap<String, usize>,
    /// (city, category) → first changepoint date of a flagged series.
    pub discontinuities: Vec<(String, Category, chrono::NaiveDate)>,
}

impl AuditReport {
    /// Structured plain-text rendering (one `key: value` per line).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("rows_read: {}\n", self.rows_read));
        out.push_str(&format!("malformed_rows: {}\n", self.malformed_rows));
        for m in &self.malformed_examples {
            out.push_str(&format!("  malformed: {m}\n"));
        }
        out.push_str(&format!("out_of_window: {}\n", self.out_of_window));
        let unmapped: usize = self.unmapped_descriptors.values().sum();
        out.push_str(&format!("unmapped_records: {unmapped}\n"));
        for (d, n) in &self.unmapped_descriptors {
            out.push_str(&format!("  unmapped: {n}\t{d}\n"));
        }
        out.push_str(&format!("discontinuities: {}\n", self.discontinuities.len()));
        for (city, cat, date) in &self.discontinuities {
            out.push_str(&format!("  flagged: {city}\t{cat}\t{date}\n"));
        }
        out
    }
}
