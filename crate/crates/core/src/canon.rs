//! Canonical text documents.
//!
//! Every persisted artifact (scenes, patches, manifests, record suites,
//! analysis results) is written as JSON with keys sorted, two-space
//! indentation, a trailing newline, and every floating value rendered in
//! scientific notation with 17 significant digits. Seventeen digits are
//! enough to recover any `f64` exactly, so `parse(render(x)) == x` and the
//! rendering of a parsed document is byte-identical to its source.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CanonError {
    #[error("cannot represent value: {0}")]
    Encode(serde_json::Error),
    #[error("malformed document at line {line}, column {column}: {message}")]
    Decode {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value, CanonError> {
    serde_json::to_value(value).map_err(CanonError::Encode)
}

pub fn to_string<T: Serialize>(value: &T) -> Result<String, CanonError> {
    Ok(render(&to_value(value)?))
}

pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<T, CanonError> {
    serde_json::from_str(text).map_err(|e| CanonError::Decode {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn write_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CanonError> {
    let text = to_string(value)?;
    std::fs::write(path, text).map_err(|source| CanonError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<T, CanonError> {
    let text = std::fs::read_to_string(path).map_err(|source| CanonError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_str(&text)
}

/// Renders a JSON value in canonical form.
pub fn render(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

/// 17 significant digits in scientific notation, e.g. `1.5000000000000000e0`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // serde_json maps non-finite floats to null before we ever see them.
        "null".to_string()
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // Short arrays of scalars stay on one line; vectors and matrices read better.
            if items.len() <= 8 && items.iter().all(is_scalar) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, depth);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, depth + 1);
                write_value(out, item, depth + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*key], depth + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}
