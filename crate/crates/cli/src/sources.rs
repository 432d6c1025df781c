//! Turns the configured source into one panel source per outcome.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use log::{info, warn};

use scpanel::datagen::generate_panel;
use scpanel::ingest::{
    build_daily_counts, detect_reporting_discontinuity, read_incidents, AuditReport, Category, CategoryMap,
    Classifier, DailyCountSeries, DailyCounts, IncidentSchema,
};
use scpanel::panel::{DailyOutcome, Panel, PanelSource};

use crate::config::{RunConfig, SourceKind};

/// Incident data after parsing, classification and counting.
pub struct Ingested {
    pub counts: DailyCounts,
    pub audit: AuditReport,
}

const MALFORMED_EXAMPLES: usize = 5;

pub fn ingest(cfg: &RunConfig) -> Result<Ingested> {
    let inc = cfg.source.incidents.as_ref().context("no incident source configured")?;
    let study = cfg.study.as_ref().context("incident sources need a [study] table")?;
    let schema_text =
        std::fs::read_to_string(&inc.schema).with_context(|| format!("reading {}", inc.schema.display()))?;
    let schema: IncidentSchema =
        toml::from_str(&schema_text).with_context(|| format!("invalid schema {}", inc.schema.display()))?;
    let map = match &inc.category_map {
        Some(p) => CategoryMap::load(p)?,
        None => CategoryMap::nyc_default(),
    };
    if let Some(v) = &inc.vocabulary {
        let text = std::fs::read_to_string(v).with_context(|| format!("reading {}", v.display()))?;
        map.check_vocabulary(&text)?;
    }

    let mut audit = AuditReport::default();
    let mut records = Vec::new();
    for file in &inc.files {
        let parsed = read_incidents(file, &schema)?;
        audit.rows_read += parsed.records.len() + parsed.errors.len();
        audit.malformed_rows += parsed.errors.len();
        let name = file.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        for e in &parsed.errors {
            if audit.malformed_examples.len() < MALFORMED_EXAMPLES {
                audit.malformed_examples.push(format!("{name} {e}"));
            }
        }
        records.extend(parsed.records);
    }
    let mut classifier = Classifier::new(&map);
    let (counts, outside) = build_daily_counts(&records, &mut classifier, study.window_start, study.window_end)?;
    audit.out_of_window = outside;
    audit.unmapped_descriptors = classifier.into_unmapped();
    for s in counts.values() {
        let d = detect_reporting_discontinuity(s, inc.discontinuity_threshold)?;
        if let (true, Some(at)) = (d.flagged, d.changepoint) {
            audit.discontinuities.push((s.city_id.clone(), s.category, at));
        }
    }
    info!(
        "ingested {} rows: {} malformed, {} outside the window, {} unmapped",
        audit.rows_read,
        audit.malformed_rows,
        audit.out_of_window,
        audit.unmapped_descriptors.values().sum::<usize>()
    );
    Ok(Ingested { counts, audit })
}

/// Daily outcome series of one city: the sum of its category series.
fn outcome_series(
    counts: &DailyCounts,
    city: &str,
    categories: &[Category],
    start: NaiveDate,
    end: NaiveDate,
) -> DailyCountSeries {
    let days = (end - start).num_days() as usize + 1;
    let mut total = vec![0u64; days];
    for c in categories {
        if let Some(s) = counts.get(&(city.to_string(), *c)) {
            for (t, n) in total.iter_mut().zip(&s.counts) {
                *t += n;
            }
        }
    }
    DailyCountSeries {
        city_id: city.to_string(),
        category: categories[0],
        start,
        counts: total,
    }
}

/// Everything needed to analyse one outcome.
pub enum OutcomeData {
    Daily {
        outcome: DailyOutcome,
        /// Donors left out because of a reporting discontinuity.
        dropped: Vec<String>,
    },
    Fixed(Panel),
}

impl OutcomeData {
    pub fn source(&self) -> &dyn PanelSource {
        match self {
            OutcomeData::Daily { outcome, .. } => outcome,
            OutcomeData::Fixed(p) => p,
        }
    }

    pub fn panel(&self) -> scpanel::Result<Panel> {
        match self {
            OutcomeData::Daily { outcome, .. } => outcome.panel(),
            OutcomeData::Fixed(p) => Ok(p.clone()),
        }
    }

    /// Treated daily counts, when the source is incident data.
    pub fn treated_daily(&self) -> Option<&DailyCountSeries> {
        match self {
            OutcomeData::Daily { outcome, .. } => outcome.series.get(&outcome.design.treated_unit),
            OutcomeData::Fixed(_) => None,
        }
    }
}

fn incident_outcome(cfg: &RunConfig, ingested: &Ingested, name: &str) -> Result<OutcomeData> {
    let mut design = cfg.design(name)?;
    let categories = &cfg.outcomes[name].categories;
    let inc = cfg.source.incidents.as_ref().context("no incident source configured")?;
    let mut series: BTreeMap<String, DailyCountSeries> = design
        .populations
        .keys()
        .map(|city| {
            let s = outcome_series(&ingested.counts, city, categories, design.window_start, design.window_end);
            (city.clone(), s)
        })
        .collect();
    let mut dropped = Vec::new();
    if inc.drop_discontinuous {
        // screened on the series that is analysed, not on its components
        for (city, s) in &series {
            let d = detect_reporting_discontinuity(s, inc.discontinuity_threshold)?;
            if d.flagged {
                if *city == design.treated_unit {
                    bail!(
                        "treated unit {city} has a reporting discontinuity in outcome {name} near {}",
                        d.changepoint.map_or_else(String::new, |c| c.to_string())
                    );
                }
                dropped.push(city.clone());
            }
        }
        if !dropped.is_empty() {
            warn!("{name}: dropping donors with reporting discontinuities: {}", dropped.join(", "));
        }
        for city in &dropped {
            design.populations.remove(city);
            series.remove(city);
        }
    }
    Ok(OutcomeData::Daily {
        outcome: DailyOutcome { series, design },
        dropped,
    })
}

/// Per-outcome data. A failure to load one outcome does not stop the others.
pub fn load_outcomes(
    cfg: &RunConfig,
    names: &[String],
    ingested: Option<&Ingested>,
) -> BTreeMap<String, Result<OutcomeData>> {
    names
        .iter()
        .map(|name| {
            let data = match cfg.source_kind() {
                SourceKind::Incidents => match ingested {
                    Some(ing) => incident_outcome(cfg, ing, name),
                    None => Err(anyhow::anyhow!("incident data not loaded")),
                },
                SourceKind::Panels => {
                    let path = &cfg.source.panels.as_ref().unwrap()[name];
                    Panel::read_csv(path)
                        .map(OutcomeData::Fixed)
                        .with_context(|| format!("loading panel {}", path.display()))
                }
                SourceKind::Datagen => {
                    let spec = &cfg.source.datagen.as_ref().unwrap()[name];
                    generate_panel(spec).map(|g| OutcomeData::Fixed(g.panel)).map_err(Into::into)
                }
            };
            (name.clone(), data)
        })
        .collect()
}
