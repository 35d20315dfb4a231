//! Atomic, deterministic report writers.

use std::path::Path;

use serde::Serialize;

use crate::error::CliResult;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    cogmotor::io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_csv<R, I, S>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| cogmotor::Error::Io(e.into_error()))?;
    cogmotor::io::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    cogmotor::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Empty string for missing values in CSV cells.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
