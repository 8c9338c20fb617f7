//! CSV / JSON knowledge-base ingestion and record flattening.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{IndexError, PartRecord, RecordSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Json,
}

impl RecordFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

impl std::str::FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format {other:?}, expected csv or json")),
        }
    }
}

/// A skipped row or element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatError {
    pub location: String,
    pub reason: String,
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<PartRecord>,
    pub errors: Vec<FormatError>,
}

fn render_scalar(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(render_scalar)
            .collect::<Vec<_>>()
            .join(", "),
        other => other.to_string(),
    }
}

fn collect_paths(prefix: Option<&str>, map: &Map<String, Value>, out: &mut Vec<(String, String)>) {
    for (key, value) in map {
        let path = match prefix {
            Some(p) => format!("{p}.{key}"),
            None => key.clone(),
        };
        match value {
            Value::Object(inner) => collect_paths(Some(&path), inner, out),
            other => out.push((path, render_scalar(other))),
        }
    }
}

/// `key: value` pairs joined by ` | `, keys sorted, nested maps as dotted
/// paths.
pub fn flatten_record(raw_fields: &Map<String, Value>) -> String {
    let mut pairs = Vec::new();
    collect_paths(None, raw_fields, &mut pairs);
    pairs.sort();
    pairs
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join(" | ")
}

fn explicit_id(fields: &Map<String, Value>) -> Option<String> {
    match fields.get("id")? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

struct Assembler {
    file_name: String,
    seen: HashSet<String>,
    report: IngestReport,
}

impl Assembler {
    fn push(&mut self, ordinal: usize, locator: String, raw_fields: Map<String, Value>) {
        let record_id =
            explicit_id(&raw_fields).unwrap_or_else(|| format!("{}:{ordinal}", self.file_name));
        if !self.seen.insert(record_id.clone()) {
            self.report.errors.push(FormatError {
                location: locator,
                reason: format!("duplicate record id {record_id:?}"),
            });
            return;
        }
        self.report.records.push(PartRecord {
            flat_text: flatten_record(&raw_fields),
            record_id,
            source: RecordSource {
                file: self.file_name.clone(),
                locator,
            },
            raw_fields,
        });
    }

    fn skip(&mut self, location: String, reason: impl Into<String>) {
        let error = FormatError {
            location,
            reason: reason.into(),
        };
        tracing::warn!(%error, "skipping knowledge-base row");
        self.report.errors.push(error);
    }
}

/// Read a knowledge-base file. Malformed rows are skipped and reported;
/// only an unreadable file or a wrong top-level shape is an error.
pub fn ingest_records(path: &Path, format: RecordFormat) -> Result<IngestReport, IndexError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut assembler = Assembler {
        file_name,
        seen: HashSet::new(),
        report: IngestReport::default(),
    };
    let io_err = |e: std::io::Error| IndexError::Io(format!("{}: {e}", path.display()));

    match format {
        RecordFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .from_path(path)
                .map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))?;
            let headers = reader
                .headers()
                .map_err(|e| IndexError::Format(format!("{}: header row: {e}", path.display())))?
                .clone();
            for (i, row) in reader.records().enumerate() {
                let ordinal = i + 1;
                let row = match row {
                    Ok(row) => row,
                    Err(e) => {
                        let line = e.position().map(|p| p.line()).unwrap_or(0);
                        assembler.skip(format!("line {line}"), e.to_string());
                        continue;
                    }
                };
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let locator = format!("line {line}");
                if row.len() != headers.len() {
                    assembler.skip(
                        locator,
                        format!("expected {} columns, found {}", headers.len(), row.len()),
                    );
                    continue;
                }
                let fields: Map<String, Value> = headers
                    .iter()
                    .zip(row.iter())
                    .filter(|(h, _)| !h.is_empty())
                    .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                    .collect();
                assembler.push(ordinal, locator, fields);
            }
        }
        RecordFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(io_err)?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| IndexError::Format(format!("{}: {e}", path.display())))?;
            let Value::Array(items) = value else {
                return Err(IndexError::Format(format!(
                    "{}: expected a JSON array of objects",
                    path.display()
                )));
            };
            for (i, item) in items.into_iter().enumerate() {
                let locator = format!("element {i}");
                match item {
                    Value::Object(fields) => assembler.push(i + 1, locator, fields),
                    other => assembler.skip(locator, format!("expected object, found {other}")),
                }
            }
        }
    }
    Ok(assembler.report)
}
