//! Run configuration (TOML). Every table rejects unknown keys, and the whole
//! document is validated before anything is read or written. Relative paths
//! are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::Deserialize;

use scpanel::datagen::FactorModelSpec;
use scpanel::inference::{default_early_rollin_dates, default_in_time_dates, InferenceOptions, Sidedness};
use scpanel::ingest::{Category, DEFAULT_DISCONTINUITY_THRESHOLD};
use scpanel::its::{HolidayCalendar, TrendSpec};
use scpanel::panel::{StudyDesign, DEFAULT_MIN_PRE_BLOCKS};
use scpanel::smooth::DEFAULT_SPAN;
use scpanel::synth::SynthOptions;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Required for incident sources; panels and generated data carry their own calendar.
    #[serde(default)]
    pub study: Option<StudyConfig>,
    pub source: SourceConfig,
    /// Outcome definitions for incident sources.
    #[serde(default)]
    pub outcomes: BTreeMap<String, OutcomeConfig>,
    #[serde(default)]
    pub synth: SynthOptions,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub placebo_dates: PlaceboDates,
    #[serde(default)]
    pub its: Option<ItsConfig>,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
}

fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub window_start: NaiveDate,
    pub intervention_date: NaiveDate,
    /// Inclusive.
    pub window_end: NaiveDate,
    pub treated_unit: String,
    pub populations: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub incidents: Option<IncidentSource>,
    /// Outcome name -> wide panel CSV (with its `.meta.json` sidecar).
    pub panels: Option<BTreeMap<String, PathBuf>>,
    /// Outcome name -> factor model.
    pub datagen: Option<BTreeMap<String, FactorModelSpec>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentSource {
    pub files: Vec<PathBuf>,
    /// TOML file holding an incident column map.
    pub schema: PathBuf,
    /// Rule table; the bundled NYC table when absent.
    #[serde(default)]
    pub category_map: Option<PathBuf>,
    /// Descriptor list the rule table must cover.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub discontinuity_threshold: f64,
    /// Drop donors whose series shows a reporting discontinuity.
    #[serde(default = "yes")]
    pub drop_discontinuous: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_DISCONTINUITY_THRESHOLD
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Level-2 categories summed into this outcome.
    pub categories: Vec<Category>,
    pub block_len_days: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub screening_factor: f64,
    pub sidedness: Sidedness,
    pub include_treated_in_pool: bool,
    pub min_pre_blocks: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let d = InferenceOptions::default();
        Self {
            screening_factor: d.screening_factor,
            sidedness: d.sidedness,
            include_treated_in_pool: d.include_treated_in_pool,
            min_pre_blocks: DEFAULT_MIN_PRE_BLOCKS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboDates {
    pub in_time: Vec<NaiveDate>,
    pub early_rollin: Vec<NaiveDate>,
}

impl Default for PlaceboDates {
    fn default() -> Self {
        Self {
            in_time: default_in_time_dates(),
            early_rollin: default_early_rollin_dates(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItsConfig {
    #[serde(default)]
    pub trend: TrendSpec,
    #[serde(default)]
    pub holidays: HolidayCalendar,
    /// Outcomes fitted with the Poisson autoregression instead of ARIMA errors.
    #[serde(default)]
    pub poisson_outcomes: Vec<String>,
    #[serde(default = "default_lags")]
    pub poisson_lags: Vec<usize>,
}

fn default_lags() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub span: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { span: DEFAULT_SPAN }
    }
}

/// Which input feeds the outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Incidents,
    Panels,
    Datagen,
}

impl RunConfig {
    /// Parses and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(inc) = &mut self.source.incidents {
            inc.files.iter_mut().for_each(fix);
            fix(&mut inc.schema);
            inc.category_map.iter_mut().for_each(fix);
            inc.vocabulary.iter_mut().for_each(fix);
        }
        if let Some(panels) = &mut self.source.panels {
            panels.values_mut().for_each(fix);
        }
    }

    pub fn source_kind(&self) -> SourceKind {
        match (&self.source.incidents, &self.source.panels) {
            (Some(_), _) => SourceKind::Incidents,
            (None, Some(_)) => SourceKind::Panels,
            (None, None) => SourceKind::Datagen,
        }
    }

    /// Outcome names in processing order.
    pub fn outcome_names(&self) -> Vec<String> {
        match self.source_kind() {
            SourceKind::Incidents => self.outcomes.keys().cloned().collect(),
            SourceKind::Panels => self.source.panels.as_ref().unwrap().keys().cloned().collect(),
            SourceKind::Datagen => self.source.datagen.as_ref().unwrap().keys().cloned().collect(),
        }
    }

    pub fn inference_options(&self) -> InferenceOptions {
        InferenceOptions {
            synth: self.synth.clone(),
            screening_factor: self.inference.screening_factor,
            include_treated_in_pool: self.inference.include_treated_in_pool,
            sidedness: self.inference.sidedness,
            min_pre_blocks: self.inference.min_pre_blocks,
        }
    }

    /// Study design for one incident outcome.
    pub fn design(&self, outcome: &str) -> Result<StudyDesign> {
        let study = self.study.as_ref().context("incident sources need a [study] table")?;
        let oc = self
            .outcomes
            .get(outcome)
            .with_context(|| format!("unknown outcome {outcome:?}"))?;
        Ok(StudyDesign {
            window_start: study.window_start,
            intervention_date: study.intervention_date,
            window_end: study.window_end,
            block_len_days: oc.block_len_days,
            treated_unit: study.treated_unit.clone(),
            populations: study.populations.clone(),
            min_pre_blocks: self.inference.min_pre_blocks,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n_sources = [
            self.source.incidents.is_some(),
            self.source.panels.is_some(),
            self.source.datagen.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if n_sources != 1 {
            bail!("[source] must set exactly one of `incidents`, `panels`, `datagen` (found {n_sources})");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must be in (0, 1), got {}", self.alpha);
        }
        if !(self.smoothing.span > 0.0 && self.smoothing.span <= 1.0) {
            bail!("smoothing.span must be in (0, 1], got {}", self.smoothing.span);
        }
        self.inference_options().validate()?;

        let kind = self.source_kind();
        if kind != SourceKind::Incidents {
            if self.study.is_some() {
                bail!("[study] applies only to incident sources");
            }
            if !self.outcomes.is_empty() {
                bail!("[outcomes] applies only to incident sources; outcomes are the keys of the source table");
            }
            if self.its.is_some() {
                bail!("[its] needs daily incident data and applies only to incident sources");
            }
        }
        let names = self.outcome_names();
        if names.is_empty() {
            bail!("no outcomes configured");
        }
        for name in &names {
            let ok = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
            if !ok {
                bail!("outcome name {name:?} must use only a-z, 0-9, '_' and '-'");
            }
        }

        match kind {
            SourceKind::Incidents => {
                let inc = self.source.incidents.as_ref().unwrap();
                if inc.files.is_empty() {
                    bail!("source.incidents.files is empty");
                }
                if !(inc.discontinuity_threshold > 1.0) {
                    bail!("discontinuity_threshold must exceed 1");
                }
                for name in &names {
                    let oc = &self.outcomes[name];
                    if oc.categories.is_empty() {
                        bail!("outcome {name:?} lists no categories");
                    }
                    self.design(name)?.validate()?;
                }
                if let Some(its) = &self.its {
                    if let Some(bad) = its.poisson_outcomes.iter().find(|o| !self.outcomes.contains_key(*o)) {
                        bail!("its.poisson_outcomes names unknown outcome {bad:?}");
                    }
                    if its.poisson_lags.is_empty() || its.poisson_lags.contains(&0) {
                        bail!("its.poisson_lags must be non-empty positive lags");
                    }
                }
            }
            SourceKind::Datagen => {
                for (name, spec) in self.source.datagen.as_ref().unwrap() {
                    spec.validate().with_context(|| format!("source.datagen.{name}"))?;
                }
            }
            SourceKind::Panels => {}
        }
        Ok(())
    }

    /// Replaces generator seeds: outcome `k` (name order) gets `seed + k`.
    pub fn override_seed(&mut self, seed: u64) -> Result<()> {
        let Some(specs) = &mut self.source.datagen else {
            bail!("--seed applies only to datagen sources");
        };
        for (k, spec) in specs.values_mut().enumerate() {
            spec.seed = seed.wrapping_add(k as u64);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[source.datagen.a]
seed = 3
"#;

    #[test]
    fn minimal_datagen_config_uses_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.smoothing.span, 0.07);
        assert_eq!(cfg.inference.screening_factor, 7.5);
        assert_eq!(cfg.placebo_dates.in_time.len(), 3);
        assert_eq!(cfg.outcome_names(), ["a"]);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            (format!("{MINIMAL}\n[synth]\nlambda_mn = 1e-8\n"), "lambda_mn"),
            (format!("colour = 1\n{MINIMAL}"), "colour"),
            (format!("{MINIMAL}n_donors = 4\n"), "n_donors"),
        ] {
            let err = toml::from_str::<RunConfig>(&text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn exactly_one_source() {
        let text = format!("{MINIMAL}[source.panels]\nb = \"b.csv\"\n");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_override_offsets_by_outcome() {
        let text = format!("{MINIMAL}[source.datagen.b]\nseed = 9\n");
        let mut cfg: RunConfig = toml::from_str(&text).unwrap();
        cfg.override_seed(100).unwrap();
        let specs = cfg.source.datagen.unwrap();
        assert_eq!((specs["a"].seed, specs["b"].seed), (100, 101));
    }

    #[test]
    fn bad_outcome_names_rejected() {
        let cfg: RunConfig = toml::from_str("output_dir = \"o\"\n[source.datagen.\"Bad Name\"]\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
