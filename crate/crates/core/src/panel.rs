//! Intervention-anchored block panels.
//!
//! Daily counts are summed into blocks of `block_len_days` laid out backward
//! and forward from the intervention date, so the intervention always falls on
//! a block boundary. Partial blocks at either end of the window are dropped.
//! Block counts are divided by population (events per person per block) and
//! each unit is demeaned on its own pre-period.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DailyCountSeries;

pub const DEFAULT_MIN_PRE_BLOCKS: usize = 8;

/// Reporting scale: rates are stored per person and shown per 1000.
pub const DISPLAY_PER: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub window_start: NaiveDate,
    pub intervention_date: NaiveDate,
    /// Inclusive.
    pub window_end: NaiveDate,
    pub block_len_days: u32,
    pub treated_unit: String,
    pub populations: BTreeMap<String, f64>,
    #[serde(default = "default_min_pre")]
    pub min_pre_blocks: usize,
}

fn default_min_pre() -> usize {
    DEFAULT_MIN_PRE_BLOCKS
}

impl StudyDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_start < self.intervention_date && self.intervention_date <= self.window_end) {
            return Err(Error::Invalid(format!(
                "study window must satisfy start < intervention <= end, got {} / {} / {}",
                self.window_start, self.intervention_date, self.window_end
            )));
        }
        if self.block_len_days == 0 {
            return Err(Error::Invalid("block_len_days must be at least 1".into()));
        }
        if !self.populations.contains_key(&self.treated_unit) {
            return Err(Error::MissingUnit(self.treated_unit.clone()));
        }
        for (unit, &population) in &self.populations {
            if !(population > 0.0 && population.is_finite()) {
                return Err(Error::BadPopulation {
                    unit: unit.clone(),
                    population,
                });
            }
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        Window {
            start: self.window_start,
            intervention: self.intervention_date,
            end: self.window_end,
        }
    }
}

/// Calendar window used to lay out blocks. `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: NaiveDate,
    pub intervention: NaiveDate,
    pub end: NaiveDate,
}

/// Block layout of a window: where the first block starts and how many blocks
/// fall on each side of the intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub first_start: NaiveDate,
    pub block_len_days: u32,
    pub n_pre: usize,
    pub n_post: usize,
}

impl BlockLayout {
    pub fn new(window: &Window, block_len_days: u32) -> Self {
        let len = i64::from(block_len_days);
        let pre_days = (window.intervention - window.start).num_days().max(0);
        let post_days = ((window.end - window.intervention).num_days() + 1).max(0);
        let n_pre = (pre_days / len) as usize;
        let n_post = (post_days / len) as usize;
        Self {
            first_start: window.intervention - Days::new(n_pre as u64 * u64::from(block_len_days)),
            block_len_days,
            n_pre,
            n_post,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_pre + self.n_post
    }

    pub fn block_start(&self, k: usize) -> NaiveDate {
        self.first_start + Days::new(k as u64 * u64::from(self.block_len_days))
    }

    pub fn block_starts(&self) -> Vec<NaiveDate> {
        (0..self.n_blocks()).map(|k| self.block_start(k)).collect()
    }

    fn check(&self, min_pre: usize) -> Result<()> {
        if self.n_pre < min_pre || self.n_post < 1 {
            return Err(Error::InsufficientBlocks {
                pre: self.n_pre,
                post: self.n_post,
                min_pre,
            });
        }
        Ok(())
    }
}

/// Summed counts per block for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCounts {
    pub unit: String,
    pub block_starts: Vec<NaiveDate>,
    pub block_len_days: u32,
    pub t0: usize,
    pub values: Vec<f64>,
}

/// Sums a daily series into intervention-anchored blocks over the design window.
pub fn aggregate_blocks(daily: &DailyCountSeries, design: &StudyDesign) -> Result<BlockCounts> {
    aggregate_window(daily, &design.window(), design.block_len_days, design.min_pre_blocks)
}

pub(crate) fn aggregate_window(
    daily: &DailyCountSeries,
    window: &Window,
    block_len_days: u32,
    min_pre_blocks: usize,
) -> Result<BlockCounts> {
    if block_len_days == 0 {
        return Err(Error::Invalid("block_len_days must be at least 1".into()));
    }
    let layout = BlockLayout::new(window, block_len_days);
    layout.check(min_pre_blocks)?;
    if daily.counts.is_empty() || daily.start > window.start || daily.end() < window.end {
        return Err(Error::WindowNotCovered {
            unit: daily.city_id.clone(),
            start: window.start,
            end: window.end,
        });
    }
    let len = block_len_days as usize;
    let offset = (layout.first_start - daily.start).num_days() as usize;
    let values = (0..layout.n_blocks())
        .map(|k| {
            let from = offset + k * len;
            daily.counts[from..from + len].iter().sum::<u64>() as f64
        })
        .collect();
    Ok(BlockCounts {
        unit: daily.city_id.clone(),
        block_starts: layout.block_starts(),
        block_len_days,
        t0: layout.n_pre,
        values,
    })
}

/// Divides block counts by population.
pub fn per_capita(counts: &[f64], population: f64) -> Result<Vec<f64>> {
    if !(population > 0.0 && population.is_finite()) {
        return Err(Error::BadPopulation {
            unit: String::new(),
            population,
        });
    }
    Ok(counts.iter().map(|c| c / population).collect())
}

/// Subtracts the mean of the first `t0` values from every value.
pub fn demean_pre(series: &[f64], t0: usize) -> Vec<f64> {
    assert!(t0 >= 1 && t0 <= series.len(), "t0 out of range");
    let mean = series[..t0].iter().sum::<f64>() / t0 as f64;
    series.iter().map(|v| v - mean).collect()
}

/// Unit × block panel of demeaned per-capita outcomes. Column 0 is the treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    block_starts: Vec<NaiveDate>,
    block_len_days: u32,
    t0: usize,
    /// Rows are blocks, columns are units.
    y: DMatrix<f64>,
    rates: DMatrix<f64>,
    raw_counts: DMatrix<f64>,
    populations: Vec<f64>,
}

impl Panel {
    /// Builds a panel from per-capita rates (not yet demeaned).
    pub fn from_rates(
        units: Vec<String>,
        block_starts: Vec<NaiveDate>,
        block_len_days: u32,
        t0: usize,
        rates: DMatrix<f64>,
        populations: Vec<f64>,
    ) -> Result<Self> {
        let (t, n) = rates.shape();
        if units.len() != n || populations.len() != n {
            return Err(Error::Invalid(format!(
                "{} units / {} populations for a {t}x{n} rate matrix",
                units.len(),
                populations.len()
            )));
        }
        if block_starts.len() != t {
            return Err(Error::Invalid(format!(
                "{} block dates for {t} blocks",
                block_starts.len()
            )));
        }
        if n < 2 {
            return Err(Error::Invalid("a panel needs a treated unit and a donor".into()));
        }
        if t0 < 1 || t0 >= t {
            return Err(Error::Invalid(format!("need 1 <= T0 < T, got T0 = {t0}, T = {t}")));
        }
        if block_len_days == 0 {
            return Err(Error::Invalid("block_len_days must be at least 1".into()));
        }
        for (u, &p) in units.iter().zip(&populations) {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::BadPopulation {
                    unit: u.clone(),
                    population: p,
                });
            }
        }
        if let Some(bad) = rates.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite panel value {bad}")));
        }
        let mut y = rates.clone();
        for j in 0..n {
            let col: Vec<f64> = rates.column(j).iter().copied().collect();
            y.set_column(j, &nalgebra::DVector::from_vec(demean_pre(&col, t0)));
        }
        let raw_counts = DMatrix::from_fn(t, n, |i, j| rates[(i, j)] * populations[j]);
        Ok(Self {
            units,
            block_starts,
            block_len_days,
            t0,
            y,
            rates,
            raw_counts,
            populations,
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[0]
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_donors(&self) -> usize {
        self.units.len() - 1
    }

    /// Total number of blocks.
    pub fn t(&self) -> usize {
        self.block_starts.len()
    }

    /// Number of pre-intervention blocks.
    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn block_starts(&self) -> &[NaiveDate] {
        &self.block_starts
    }

    pub fn block_len_days(&self) -> u32 {
        self.block_len_days
    }

    pub fn intervention_date(&self) -> NaiveDate {
        self.block_starts[self.t0]
    }

    /// Demeaned per-capita outcomes, blocks × units.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn raw_counts(&self) -> &DMatrix<f64> {
        &self.raw_counts
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit)
    }

    /// Outcome column of unit `j` (0 = treated).
    pub fn series(&self, j: usize) -> Vec<f64> {
        self.y.column(j).iter().copied().collect()
    }

    /// Reorders/filters columns: `order[0]` becomes the treated unit.
    /// Values are copied untouched, so every kept column is bit-identical.
    pub fn select_units(&self, order: &[usize]) -> Result<Panel> {
        if order.len() < 2 {
            return Err(Error::Invalid("a panel needs a treated unit and a donor".into()));
        }
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), order.len(), |i, k| m[(i, order[k])]);
        Ok(Panel {
            units: order.iter().map(|&j| self.units[j].clone()).collect(),
            block_starts: self.block_starts.clone(),
            block_len_days: self.block_len_days,
            t0: self.t0,
            y: pick(&self.y),
            rates: pick(&self.rates),
            raw_counts: pick(&self.raw_counts),
            populations: order.iter().map(|&j| self.populations[j]).collect(),
        })
    }

    /// Panel with unit `treated` in the treated slot and the other units minus
    /// `exclude` as donors (original order).
    pub fn with_treated(&self, treated: usize, exclude: &[usize]) -> Result<Panel> {
        let mut order = vec![treated];
        order.extend((0..self.n_units()).filter(|j| *j != treated && !exclude.contains(j)));
        self.select_units(&order)
    }

    /// Applies `f` to every per-capita rate and re-demeans.
    pub fn map_rates(&self, f: impl Fn(f64) -> f64) -> Result<Panel> {
        Panel::from_rates(
            self.units.clone(),
            self.block_starts.clone(),
            self.block_len_days,
            self.t0,
            self.rates.map(f),
            self.populations.clone(),
        )
    }

    /// Re-cuts the panel on block boundaries: keeps blocks lying inside
    /// `[start, end]`, drops a block straddling the new intervention date and
    /// splits pre/post at it.
    pub fn rewindow(&self, window: &Window, min_pre_blocks: usize) -> Result<Panel> {
        let len = i64::from(self.block_len_days);
        let mut keep = Vec::new();
        let mut t0 = 0;
        for (k, &s) in self.block_starts.iter().enumerate() {
            let last = s + Days::new(len as u64 - 1);
            if s < window.start || last > window.end {
                continue;
            }
            if last < window.intervention {
                t0 += 1;
                keep.push(k);
            } else if s >= window.intervention {
                keep.push(k);
            }
        }
        let post = keep.len() - t0;
        if t0 < min_pre_blocks.max(1) || post < 1 {
            return Err(Error::InsufficientBlocks {
                pre: t0,
                post,
                min_pre: min_pre_blocks,
            });
        }
        let rates = DMatrix::from_fn(keep.len(), self.n_units(), |i, j| self.rates[(keep[i], j)]);
        Panel::from_rates(
            self.units.clone(),
            keep.iter().map(|&k| self.block_starts[k]).collect(),
            self.block_len_days,
            t0,
            rates,
            self.populations.clone(),
        )
    }
}

/// Assembles a panel from per-unit block counts. Donors follow the name order
/// of `design.populations`.
pub fn assemble_panel(series: &BTreeMap<String, BlockCounts>, design: &StudyDesign) -> Result<Panel> {
    design.validate()?;
    let mut units = vec![design.treated_unit.clone()];
    units.extend(
        design
            .populations
            .keys()
            .filter(|u| **u != design.treated_unit)
            .cloned(),
    );
    let reference = series
        .get(&design.treated_unit)
        .ok_or_else(|| Error::MissingUnit(design.treated_unit.clone()))?;
    let t = reference.values.len();
    let mut rates = DMatrix::zeros(t, units.len());
    let mut populations = Vec::with_capacity(units.len());
    for (j, unit) in units.iter().enumerate() {
        let s = series.get(unit).ok_or_else(|| Error::MissingUnit(unit.clone()))?;
        if s.block_starts != reference.block_starts || s.t0 != reference.t0 {
            return Err(Error::Invalid(format!(
                "blocks of {unit} do not line up with {}",
                design.treated_unit
            )));
        }
        let pop = design.populations[unit];
        let r = per_capita(&s.values, pop).map_err(|_| Error::BadPopulation {
            unit: unit.clone(),
            population: pop,
        })?;
        rates.set_column(j, &nalgebra::DVector::from_vec(r));
        populations.push(pop);
    }
    Panel::from_rates(
        units,
        reference.block_starts.clone(),
        reference.block_len_days,
        reference.t0,
        rates,
        populations,
    )
}

/// Anything a panel can be (re)built from for a given calendar window.
pub trait PanelSource: Sync {
    fn build(&self, window: &Window, min_pre_blocks: usize) -> Result<Panel>;

    /// Window of the primary analysis.
    fn primary_window(&self) -> Window;
}

impl PanelSource for Panel {
    fn build(&self, window: &Window, min_pre_blocks: usize) -> Result<Panel> {
        self.rewindow(window, min_pre_blocks)
    }

    fn primary_window(&self) -> Window {
        let len = u64::from(self.block_len_days);
        Window {
            start: self.block_starts[0],
            intervention: self.intervention_date(),
            end: *self.block_starts.last().unwrap() + Days::new(len - 1),
        }
    }
}

/// Daily counts for every unit of one outcome, re-blocked on demand.
#[derive(Debug, Clone)]
pub struct DailyOutcome {
    pub series: BTreeMap<String, DailyCountSeries>,
    pub design: StudyDesign,
}

impl DailyOutcome {
    pub fn panel(&self) -> Result<Panel> {
        self.build(&self.design.window(), self.design.min_pre_blocks)
    }
}

impl PanelSource for DailyOutcome {
    fn build(&self, window: &Window, min_pre_blocks: usize) -> Result<Panel> {
        let mut blocks = BTreeMap::new();
        for unit in self.design.populations.keys() {
            let daily = self
                .series
                .get(unit)
                .ok_or_else(|| Error::MissingUnit(unit.clone()))?;
            blocks.insert(
                unit.clone(),
                aggregate_window(daily, window, self.design.block_len_days, min_pre_blocks)?,
            );
        }
        assemble_panel(&blocks, &self.design)
    }

    fn primary_window(&self) -> Window {
        self.design.window()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Events per person per block.
    Rate,
    /// Raw block counts; divided by population on import.
    Count,
}

/// Sidecar metadata for a wide panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelMeta {
    pub treated_unit: String,
    pub t0: usize,
    pub block_len_days: u32,
    pub value_kind: ValueKind,
    pub populations: BTreeMap<String, f64>,
}

/// Path of the metadata sidecar for a panel CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

impl Panel {
    pub fn meta(&self) -> PanelMeta {
        PanelMeta {
            treated_unit: self.treated_unit().to_string(),
            t0: self.t0,
            block_len_days: self.block_len_days,
            value_kind: ValueKind::Rate,
            populations: self
                .units
                .iter()
                .cloned()
                .zip(self.populations.iter().copied())
                .collect(),
        }
    }

    /// Writes `rows = blocks, columns = units` rates plus the JSON sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let ctx = path.display().to_string();
        let mut header = vec!["block_start".to_string()];
        header.extend(self.units.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(&ctx, e))?;
        for (i, start) in self.block_starts.iter().enumerate() {
            let mut row = vec![start.to_string()];
            row.extend((0..self.n_units()).map(|j| self.rates[(i, j)].to_string()));
            w.write_record(&row).map_err(|e| Error::csv(&ctx, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    /// Reads a panel written by [`Panel::write_csv`] (or hand-made in the same layout).
    pub fn read_csv(path: &Path) -> Result<Panel> {
        let meta_path = sidecar_path(path);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: PanelMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Invalid(format!("{}: {e}", meta_path.display())))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let ctx = path.display().to_string();
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::csv(&ctx, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.first().map(String::as_str) != Some("block_start") || header.len() < 3 {
            return Err(Error::Invalid(format!("{ctx}: expected block_start and unit columns")));
        }
        let file_units = &header[1..];
        let mut starts = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(&ctx, e))?;
            let bad = |what: String| Error::Invalid(format!("{ctx} row {}: {what}", i + 1));
            starts.push(
                NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                    .map_err(|_| bad(format!("bad date {:?}", &rec[0])))?,
            );
            rows.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad value {v:?}"))))
                    .collect::<Result<_>>()?,
            );
        }
        // Treated first, then the file's remaining column order.
        let treated = file_units
            .iter()
            .position(|u| *u == meta.treated_unit)
            .ok_or_else(|| Error::MissingUnit(meta.treated_unit.clone()))?;
        let mut order = vec![treated];
        order.extend((0..file_units.len()).filter(|&j| j != treated));
        let units: Vec<String> = order.iter().map(|&j| file_units[j].clone()).collect();
        let populations = units
            .iter()
            .map(|u| {
                meta.populations
                    .get(u)
                    .copied()
                    .ok_or_else(|| Error::MissingUnit(u.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let rates = DMatrix::from_fn(rows.len(), units.len(), |i, k| {
            let v = rows[i][order[k]];
            match meta.value_kind {
                ValueKind::Rate => v,
                ValueKind::Count => v / populations[k],
            }
        });
        Panel::from_rates(units, starts, meta.block_len_days, meta.t0, rates, populations)
    }
}
