//! Per-step CSV log with a fixed column layout.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 15] =
    ["t", "x1", "v1", "x2", "v2", "z1", "z2", "xh1", "vh1", "xh2", "vh2", "offset", "u", "recovery", "detach_state"];

/// One control step. SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub x1: f64,
    pub v1: f64,
    pub x2: f64,
    pub v2: f64,
    pub z1: f64,
    /// Empty when the laser channel was not sampled.
    pub z2: Option<f64>,
    pub xh1: f64,
    pub vh1: f64,
    pub xh2: f64,
    pub vh2: f64,
    pub offset: f64,
    pub u: f64,
    pub recovery: u8,
    pub detach_state: String,
}

pub fn write_log_to<W: Write>(records: &[LogRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(COLUMNS).map_err(|e| Error::Log(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Log(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Log(e.to_string()))
}

pub fn write_log(records: &[LogRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log_to(records, std::io::BufWriter::new(file))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Log(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Log(e.to_string()))?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Log(format!("{}: unexpected header {:?}", path.display(), headers)));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Log(format!("{}: record {}: {e}", path.display(), i + 1))))
        .collect()
}
