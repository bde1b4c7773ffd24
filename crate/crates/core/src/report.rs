//! CSV exports. Every file starts with one JSON metadata line followed by a
//! regular header row and records.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::io::atomic_write;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv encoding failed: {0}")]
    Encode(#[from] csv::Error),
}

pub fn csv_string<T: Serialize>(meta: &serde_json::Value, rows: &[T]) -> Result<String, CsvError> {
    let mut out = serde_json::to_string(meta).expect("metadata serializes");
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| CsvError::Encode(e.into_error().into()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_csv<T: Serialize>(
    path: &Path,
    meta: &serde_json::Value,
    rows: &[T],
) -> Result<(), CsvError> {
    let text = csv_string(meta, rows)?;
    atomic_write(path, text.as_bytes()).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Splits a metadata-prefixed CSV into its metadata and raw CSV body.
pub fn split_metadata(text: &str) -> Option<(serde_json::Value, &str)> {
    let (first, rest) = text.split_once('\n')?;
    Some((serde_json::from_str(first).ok()?, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        step: usize,
        value: f64,
    }

    #[test]
    fn metadata_line_then_header() {
        let text = csv_string(
            &serde_json::json!({"kind": "demo"}),
            &[
                Row {
                    step: 0,
                    value: 1.5,
                },
                Row {
                    step: 1,
                    value: -2.0,
                },
            ],
        )
        .unwrap();
        let (meta, body) = split_metadata(&text).unwrap();
        assert_eq!(meta["kind"], "demo");
        assert_eq!(body, "step,value\n0,1.5\n1,-2.0\n");
    }
}
