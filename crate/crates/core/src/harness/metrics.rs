//! Line-delimited metrics: a version header, then one record per line of
//! space-separated `key=value` fields. Append-only; floats use Rust's
//! shortest round-trip formatting, so reruns are byte-reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const METRICS_HEADER: &str = "# latentlm metrics v1";

pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Value {
    fn from(v: usize) -> Value {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Value {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Value {
        Value::Text(v.to_string())
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> std::io::Result<MetricsWriter> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    /// Writes one record. Panics on non-finite numeric fields: a NaN in a
    /// metrics file is always a bug upstream.
    pub fn write(&mut self, fields: &[(&str, Value)]) -> std::io::Result<()> {
        let mut line = String::new();
        for (i, (key, value)) in fields.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(key);
            line.push('=');
            match value {
                Value::Int(v) => line.push_str(&v.to_string()),
                Value::Float(v) => {
                    assert!(v.is_finite(), "metrics field {key} is not finite: {v}");
                    line.push_str(&v.to_string());
                }
                Value::Text(v) => {
                    assert!(!v.contains(char::is_whitespace), "metrics field {key} contains whitespace");
                    line.push_str(v);
                }
            }
        }
        writeln!(self.out, "{line}")
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Parses a metrics file back into records (used by tests and recipes).
pub fn read_metrics(path: &Path) -> std::io::Result<Vec<Vec<(String, String)>>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let record = line
            .split_whitespace()
            .filter_map(|field| field.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        records.push(record);
    }
    Ok(records)
}

/// Convenience: the parsed float value of `key` in a record.
pub fn field_f64(record: &[(String, String)], key: &str) -> Option<f64> {
    record.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
}
