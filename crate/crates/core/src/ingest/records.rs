use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One reported incident.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentRecord {
    pub city_id: String,
    pub event_date: NaiveDate,
    /// Offense / law / agency descriptors, in schema column order.
    pub offense_text: Vec<String>,
    pub agency_code: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    /// `YYYY-MM-DD`, optionally followed by a time part.
    #[default]
    Iso,
    /// `MM/DD/YYYY`, optionally followed by a time part.
    Mdy,
}

impl DateFormat {
    pub fn parse(self, raw: &str) -> Option<NaiveDate> {
        let token = raw.trim().split(['T', ' ']).next()?;
        let fmt = match self {
            DateFormat::Iso => "%Y-%m-%d",
            DateFormat::Mdy => "%m/%d/%Y",
        };
        NaiveDate::parse_from_str(token, fmt).ok()
    }
}

/// Column map for one incident file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentSchema {
    /// Column holding the city token. Ignored when `city` is set.
    #[serde(default)]
    pub city_column: Option<String>,
    /// Fixed city token for single-city files.
    #[serde(default)]
    pub city: Option<String>,
    pub date_column: String,
    #[serde(default)]
    pub date_format: DateFormat,
    pub descriptor_columns: Vec<String>,
    #[serde(default)]
    pub code_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row index (the header is row 0).
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

/// Result of parsing a whole file: good records in file order plus row errors.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<IncidentRecord>,
    pub errors: Vec<RowError>,
}

struct ColumnIndex {
    city: Option<usize>,
    date: usize,
    descriptors: Vec<usize>,
    code: Option<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &IncidentSchema) -> Result<ColumnIndex> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Invalid(format!("column {name:?} not found in header")))
    };
    let city = match (&schema.city, &schema.city_column) {
        (Some(_), _) => None,
        (None, Some(col)) => Some(find(col)?),
        (None, None) => {
            return Err(Error::Invalid(
                "schema must name either `city` or `city_column`".into(),
            ))
        }
    };
    if schema.descriptor_columns.is_empty() {
        return Err(Error::Invalid("schema names no descriptor columns".into()));
    }
    Ok(ColumnIndex {
        city,
        date: find(&schema.date_column)?,
        descriptors: schema
            .descriptor_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?,
        code: schema.code_column.as_deref().map(find).transpose()?,
    })
}

/// Parses incident rows from any reader. Row-level problems are collected, not fatal.
pub fn parse_incidents<R: Read>(reader: R, schema: &IncidentSchema) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv("incident header", e))?
        .clone();
    let cols = resolve_columns(&headers, schema)?;

    let mut out = ParseOutcome::default();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    row: row_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match record_from_row(&row, &cols, schema) {
            Ok(rec) => out.records.push(rec),
            Err(message) => out.errors.push(RowError { row: row_no, message }),
        }
    }
    Ok(out)
}

fn record_from_row(
    row: &csv::StringRecord,
    cols: &ColumnIndex,
    schema: &IncidentSchema,
) -> std::result::Result<IncidentRecord, String> {
    let field = |idx: usize| {
        row.get(idx)
            .ok_or_else(|| format!("missing column {idx} (row has {} fields)", row.len()))
    };
    let city_id = match (&schema.city, cols.city) {
        (Some(c), _) => c.clone(),
        (None, Some(idx)) => field(idx)?.trim().to_string(),
        (None, None) => unreachable!("validated in resolve_columns"),
    };
    if city_id.is_empty() {
        return Err("empty city".into());
    }
    let raw_date = field(cols.date)?;
    let event_date = schema
        .date_format
        .parse(raw_date)
        .ok_or_else(|| format!("unparseable date {raw_date:?}"))?;
    let offense_text = cols
        .descriptors
        .iter()
        .map(|&i| field(i).map(|s| s.trim().to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let agency_code = match cols.code {
        Some(i) => Some(field(i)?.trim().to_string()).filter(|s| !s.is_empty()),
        None => None,
    };
    Ok(IncidentRecord {
        city_id,
        event_date,
        offense_text,
        agency_code,
    })
}

/// Opens and parses an incident file. An unreadable file is fatal.
pub fn read_incidents(path: &Path, schema: &IncidentSchema) -> Result<ParseOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_incidents(std::io::BufReader::new(file), schema)
}
