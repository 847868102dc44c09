//! CSV and JSON serialization for spectra, curves and reports.
//!
//! Floats are written with the shortest representation that round-trips, so
//! identical values always produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::IoError;
use crate::spectrum::{AbsorptionSpectrum, SpectrumMetadata};

/// Shortest round-trip decimal form; exponent notation for very small or large magnitudes.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if a < 1e-4 || a >= 1e15 {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Column by position.
    pub fn nth(&self, j: usize) -> Option<Vec<f64>> {
        (j < self.headers.len()).then(|| self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Read a CSV with one header row. Lines starting with `#` are skipped.
/// Every data field must parse as a finite number.
pub fn read_table(path: &Path) -> Result<Table, IoError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(IoError::Malformed(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    IoError::Malformed(format!("{}: row {}, column '{}': '{field}' is not a finite number", path.display(), i + 1, headers[j]))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

/// Write a CSV table, optionally preceded by `# ` comment lines.
pub fn write_table(path: &Path, headers: &[&str], rows: &[Vec<f64>], comments: &[String]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", headers.join(","))?;
    for row in rows {
        if row.len() != headers.len() {
            return Err(IoError::Malformed(format!("row has {} fields, header has {}", row.len(), headers.len())));
        }
        let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Metadata sidecar path: the CSV path with a `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Write `frequency_ghz,depth` rows plus a JSON metadata sidecar.
pub fn write_spectrum(path: &Path, spectrum: &AbsorptionSpectrum) -> Result<(), IoError> {
    let rows: Vec<Vec<f64>> = spectrum.frequency_ghz.iter().zip(&spectrum.depth).map(|(f, d)| vec![*f, *d]).collect();
    write_table(path, &["frequency_ghz", "depth"], &rows, &[])?;
    write_json(&sidecar_path(path), &spectrum.metadata)
}

/// Read a spectrum CSV. The sidecar is optional; metadata defaults to empty.
pub fn read_spectrum(path: &Path) -> Result<AbsorptionSpectrum, IoError> {
    let table = read_table(path)?;
    let (Some(nu), Some(depth)) = (table.column("frequency_ghz"), table.column("depth")) else {
        return Err(IoError::Malformed(format!("{}: expected columns frequency_ghz, depth", path.display())));
    };
    let sidecar = sidecar_path(path);
    let metadata: SpectrumMetadata = if sidecar.exists() {
        serde_json::from_reader(File::open(&sidecar)?)?
    } else {
        SpectrumMetadata::default()
    };
    Ok(AbsorptionSpectrum::new(nu, depth, metadata)?)
}
