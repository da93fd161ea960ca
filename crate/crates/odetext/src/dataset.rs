//! Labelled text corpora from CSV (with a header row) or JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl`, `.ndjson` and `.json` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

/// `(text, raw label)` records in file order.
pub fn read_records(
    path: &Path,
    format: Format,
    text_field: &str,
    label_field: &str,
) -> CliResult<Vec<(String, String)>> {
    let records = read(path, format, text_field, Some(label_field))?;
    Ok(records
        .into_iter()
        .map(|(t, l)| (t, l.expect("label field requested")))
        .collect())
}

/// Texts only; no label field is needed.
pub fn read_texts(path: &Path, format: Format, text_field: &str) -> CliResult<Vec<String>> {
    Ok(read(path, format, text_field, None)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

type Records = Vec<(String, Option<String>)>;

fn read(path: &Path, format: Format, text_field: &str, label_field: Option<&str>) -> CliResult<Records> {
    let file = File::open(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let records = match format {
        Format::Csv => read_csv(file, text_field, label_field),
        Format::Jsonl => read_jsonl(file, text_field, label_field),
    };
    records.map_err(|msg| CliError::input(format!("{}: {msg}", path.display())))
}

fn checked_label(label: String, field: &str, line: u64) -> Result<String, String> {
    let label = label.trim();
    if label.is_empty() {
        return Err(format!("line {line}: empty field '{field}'"));
    }
    Ok(label.to_string())
}

fn read_csv(file: File, text_field: &str, label_field: Option<&str>) -> Result<Records, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| format!("line 1: {e}"))?.clone();
    let column = |field: &str| {
        headers
            .iter()
            .position(|h| h == field)
            .ok_or_else(|| format!("line 1: header has no field '{field}'"))
    };
    let ti = column(text_field)?;
    let li = label_field.map(|f| column(f).map(|i| (i, f))).transpose()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(p) => format!("line {}: {e}", p.line()),
            None => e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| {
            record
                .get(i)
                .map(str::to_string)
                .ok_or_else(|| format!("line {line}: missing field '{name}'"))
        };
        let text = field(ti, text_field)?;
        let label = match li {
            Some((i, name)) => Some(checked_label(field(i, name)?, name, line)?),
            None => None,
        };
        out.push((text, label));
    }
    Ok(out)
}

fn read_jsonl(file: File, text_field: &str, label_field: Option<&str>) -> Result<Records, String> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| format!("line {n}: {e}"))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| format!("line {n}: {e}"))?;
        let get = |name: &str| -> Result<String, String> {
            match value.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(x)) => Ok(x.to_string()),
                Some(Value::Bool(b)) => Ok(b.to_string()),
                Some(Value::Null) | None => Err(format!("line {n}: missing field '{name}'")),
                Some(_) => Err(format!("line {n}: field '{name}' is not a string or number")),
            }
        };
        let text = get(text_field)?;
        let label = match label_field {
            Some(name) => Some(checked_label(get(name)?, name, n as u64)?),
            None => None,
        };
        out.push((text, label));
    }
    Ok(out)
}
