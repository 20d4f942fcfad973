//! Report emission: JSON-lines and CSV with a fixed float format.
//!
//! Every float is written with 17 significant digits (`{:.16e}`), which
//! round-trips any `f64` exactly. Non-finite values become `null` in JSON and
//! `NaN`/`inf`/`-inf` in CSV.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One report row. Keys keep insertion order.
pub type Record = Map<String, Value>;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

struct SigDigitsFormatter;

impl Formatter for SigDigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes any value as compact JSON with the fixed float format.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitsFormatter);
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    /// CSV with the given column order; missing keys are written empty.
    Csv,
}

/// Encodes records as JSON-lines (one object per line).
pub fn encode_json_lines(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_json_string(r));
        out.push('\n');
    }
    out
}

/// Encodes records as CSV with a header row given by `columns`.
pub fn encode_csv(records: &[Record], columns: &[&str]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for r in records {
        let row: Vec<String> = columns
            .iter()
            .map(|c| match r.get(*c) {
                None | Some(Value::Null) => String::new(),
                Some(Value::Number(n)) => match n.as_f64() {
                    Some(f) if n.is_f64() => fmt_f64(f),
                    _ => n.to_string(),
                },
                Some(Value::String(s)) => s.clone(),
                Some(other) => to_json_string(other),
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `records` to `path`. CSV uses the keys of the first record as columns
/// unless `columns` is given; an empty JSON-lines report is an empty file.
pub fn emit_report(
    records: &[Record],
    format: ReportFormat,
    columns: Option<&[&str]>,
    path: &Path,
) -> Result<()> {
    let text = match format {
        ReportFormat::JsonLines => encode_json_lines(records),
        ReportFormat::Csv => {
            let owned: Vec<String>;
            let cols: Vec<&str> = match columns {
                Some(c) => c.to_vec(),
                None => {
                    owned = records
                        .first()
                        .map(|r| r.keys().cloned().collect())
                        .unwrap_or_default();
                    owned.iter().map(String::as_str).collect()
                }
            };
            encode_csv(records, &cols)
        }
    };
    write_file(path, &text)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parses a JSON-lines document back into records.
pub fn parse_json_lines(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str::<Record>(l)?))
        .collect()
}

/// Small builder so call sites read as `record!("experiment", ...)`.
#[derive(Debug, Default, Clone)]
pub struct RecordBuilder(Record);

impl RecordBuilder {
    pub fn new(experiment: &str) -> Self {
        let mut r = Record::new();
        r.insert("experiment".into(), Value::from(experiment));
        Self(r)
    }

    pub fn field(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn opt(self, key: &str, value: Option<f64>) -> Self {
        self.field(key, value.map(Value::from).unwrap_or(Value::Null))
    }

    pub fn build(self) -> Record {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<Record> {
        vec![
            RecordBuilder::new("demo")
                .field("alpha", 1.8)
                .field("estimate", 0.1 + 0.2)
                .field("n", 2000u64)
                .field("flags", Value::Array(vec!["ok".into()]))
                .build(),
            RecordBuilder::new("demo")
                .field("alpha", 1.6)
                .field("estimate", -1.0e-300)
                .field("n", 3u64)
                .opt("slope", None)
                .build(),
        ]
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn json_lines_round_trip() {
        let records = sample_records();
        let text = encode_json_lines(&records);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_json_lines(&text).unwrap(), records);
    }

    #[test]
    fn non_finite_becomes_null() {
        let r = RecordBuilder::new("x").field("v", f64::INFINITY).build();
        assert!(to_json_string(&r).contains("\"v\":null"));
    }

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        emit_report(&[], ReportFormat::JsonLines, None, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        let c = dir.path().join("empty.csv");
        emit_report(&[], ReportFormat::Csv, Some(&["n", "survival"]), &c).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), "n,survival\n");
    }

    #[test]
    fn csv_column_order_is_fixed() {
        let text = encode_csv(&sample_records(), &["n", "alpha", "slope"]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,alpha,slope"));
        assert_eq!(lines.next(), Some("2000,1.8000000000000000e0,"));
    }

    #[test]
    fn io_failure_is_surfaced() {
        let err = emit_report(
            &sample_records(),
            ReportFormat::JsonLines,
            None,
            Path::new("/nonexistent-dir/x.jsonl"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io(_)));
        assert!(err.to_string().contains("/nonexistent-dir/x.jsonl"));
    }
}
