//! Text checkpoint format for named parameters.
//!
//! Layout: a version header line, then one line per parameter:
//!
//! ```text
//! # latentlm checkpoint v1
//! <name> <rank> <dim...> <value...>
//! ```
//!
//! Values are written with 17 significant digits, which round-trips `f64`
//! bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::ParamSet;

pub const CHECKPOINT_HEADER: &str = "# latentlm checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header {0:?}")]
    BadHeader(String),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("parameter {name:?}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("parameter {0:?} missing from checkpoint")]
    MissingParam(String),
}

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, t) in params.iter() {
        out.push_str(name);
        out.push_str(&format!(" {}", t.rank()));
        for d in t.shape() {
            out.push_str(&format!(" {d}"));
        }
        for v in t.values().iter() {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Raw parsed records: `(name, shape, values)`.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CHECKPOINT_HEADER => {}
        Some((_, h)) => return Err(CheckpointError::BadHeader(h.to_string())),
        None => return Err(CheckpointError::BadHeader(String::new())),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| CheckpointError::Parse(lineno, "missing parameter name".into()))?
            .to_string();
        let rank: usize = fields
            .next()
            .ok_or_else(|| CheckpointError::Parse(lineno, "missing rank".into()))?
            .parse()
            .map_err(|e| CheckpointError::Parse(lineno, format!("bad rank: {e}")))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d: usize = fields
                .next()
                .ok_or_else(|| CheckpointError::Parse(lineno, "missing dimension".into()))?
                .parse()
                .map_err(|e| CheckpointError::Parse(lineno, format!("bad dimension: {e}")))?;
            shape.push(d);
        }
        let expect: usize = shape.iter().product();
        let mut values = Vec::with_capacity(expect);
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|e| CheckpointError::Parse(lineno, format!("bad value {field:?}: {e}")))?;
            values.push(v);
        }
        if values.len() != expect {
            return Err(CheckpointError::Parse(
                lineno,
                format!("expected {expect} values for shape {shape:?}, got {}", values.len()),
            ));
        }
        records.push((name, shape, values));
    }
    Ok(records)
}

/// Loads a checkpoint into an existing parameter set, matching by name and
/// requiring identical shapes.
pub fn load_into_params(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let records = load_checkpoint(path)?;
    for (name, t) in params.iter() {
        let rec = records
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| CheckpointError::MissingParam(name.to_string()))?;
        if rec.1 != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: rec.1.clone(),
                expected: t.shape().to_vec(),
            });
        }
        t.set_values(&rec.2);
    }
    Ok(())
}
