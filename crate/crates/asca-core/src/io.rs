//! Reading raw records from delimiter-separated text.
//!
//! Expected layout: a `timestamp,series,value` header, ISO-8601 local
//! timestamps, one measurement per line. An empty value field is a known
//! gap: the line is skipped and counted, leaving a missing cell.

use crate::error::AscaError;
use crate::tensor::Record;
use crate::Result;
use chrono::{NaiveDate, NaiveDateTime};
use std::io::Read;
use std::path::Path;

/// Outcome of a read: the records plus what was skipped.
#[derive(Debug)]
pub struct ReadReport {
    pub records: Vec<Record>,
    /// Lines with an empty value field.
    pub blank_values: usize,
}

/// Accepted timestamp shapes, tried in order. Date-only means midnight.
fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(t);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M") {
        return Some(t);
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    None
}

/// Read records from any source. The header line is mandatory.
pub fn read_records<R: Read>(reader: R) -> Result<ReadReport> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    {
        let headers = csv_reader
            .headers()
            .map_err(|e| AscaError::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["timestamp", "series", "value"];
        let got: Vec<String> = headers.iter().map(|h| h.trim().to_lowercase()).collect();
        if got != expected {
            return Err(AscaError::Parse {
                line: 1,
                message: format!("header must be 'timestamp,series,value', got '{}'", got.join(",")),
            });
        }
    }

    let mut records = Vec::new();
    let mut blank_values = 0usize;
    for (i, row) in csv_reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| AscaError::Parse {
            line,
            message: e.to_string(),
        })?;
        let ts_field = row.get(0).unwrap_or("").trim();
        let series = row.get(1).unwrap_or("").trim();
        let value_field = row.get(2).unwrap_or("").trim();

        if value_field.is_empty() {
            blank_values += 1;
            continue;
        }
        let timestamp = parse_timestamp(ts_field).ok_or_else(|| AscaError::Parse {
            line,
            message: format!("unparseable timestamp '{ts_field}'"),
        })?;
        let value: f64 = value_field.parse().map_err(|_| AscaError::Parse {
            line,
            message: format!("unparseable value '{value_field}'"),
        })?;
        if !value.is_finite() {
            return Err(AscaError::Parse {
                line,
                message: format!("non-finite value '{value_field}'"),
            });
        }
        records.push(Record {
            timestamp,
            series: series.to_string(),
            value,
        });
    }
    Ok(ReadReport {
        records,
        blank_values,
    })
}

/// Read records from a file.
pub fn read_records_path(path: &Path) -> Result<ReadReport> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file))
}
