//! Serde-driven CSV for the pipeline's own intermediate tables.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::io::{open_input, open_output};
use super::{IngestError, Result};

pub fn write_table<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(open_output(path)?);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io_err(e.into_error()))?.finish().map_err(io_err)
}

/// Rows that fail to deserialize are reported with their 1-based line.
pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open_input(path)?);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        match rec {
            Ok(v) => out.push(v),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(match e.kind() {
                    csv::ErrorKind::Io(_) => IngestError::Csv { path: path.to_path_buf(), source: e },
                    _ => IngestError::MalformedRow { path: path.to_path_buf(), line, message: e.to_string() },
                });
            }
        }
    }
    Ok(out)
}
