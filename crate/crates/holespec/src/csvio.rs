//! Plot-ready CSV emission and strict CSV ingestion for spectra and time
//! series. One header line naming columns and units, comma separators,
//! decimal points, newline-terminated rows.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! read(write(x)) reproduces x bit-exactly.

use crate::spectro::{AxisKind, Spectrum, SpectroError};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount { path: String, line: usize, expected: usize, found: usize },
    #[error("{path}:{line}: malformed number in column {column}: {reason}")]
    BadNumber { path: String, line: usize, column: usize, reason: String },
    #[error("{path}: missing header line")]
    MissingHeader { path: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("{path}:{line}: axis must be strictly monotonic")]
    NonMonotonic { path: String, line: usize },
    #[error(transparent)]
    Spectro(#[from] SpectroError),
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Header used for each axis kind.
pub fn spectrum_header(kind: AxisKind, value_label: &str) -> String {
    let axis = match kind {
        AxisKind::AbsoluteFrequency => "frequency_hz",
        AxisKind::Detuning => "detuning_hz",
        AxisKind::Wavelength => "wavelength_nm",
    };
    format!("{axis},{value_label}")
}

fn axis_kind_from_header(label: &str) -> Option<AxisKind> {
    match label {
        "frequency_hz" => Some(AxisKind::AbsoluteFrequency),
        "detuning_hz" => Some(AxisKind::Detuning),
        "wavelength_nm" => Some(AxisKind::Wavelength),
        _ => None,
    }
}

fn render_rows(header: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut out = String::with_capacity(32 * (xs.len() + 1));
    out.push_str(header);
    out.push('\n');
    for (x, y) in xs.iter().zip(ys) {
        // shortest representation that round-trips exactly
        writeln!(out, "{x},{y}").expect("string write");
    }
    out
}

/// Write a spectrum as two-column CSV.
pub fn write_spectrum(path: &Path, spectrum: &Spectrum, value_label: &str) -> Result<(), CsvError> {
    let body = render_rows(
        &spectrum_header(spectrum.axis_kind(), value_label),
        spectrum.axis(),
        spectrum.values(),
    );
    std::fs::write(path, body).map_err(|source| CsvError::Io { path: path_str(path), source })
}

/// Write a time/value series as two-column CSV.
pub fn write_series(path: &Path, times: &[f64], values: &[f64], header: &str) -> Result<(), CsvError> {
    let body = render_rows(header, times, values);
    std::fs::write(path, body).map_err(|source| CsvError::Io { path: path_str(path), source })
}

fn parse_two_columns(path: &Path, text: &str) -> Result<(String, Vec<f64>, Vec<f64>), CsvError> {
    let p = path_str(path);
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CsvError::MissingHeader { path: p.clone() })?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(CsvError::ColumnCount {
                path: p,
                line: i + 1,
                expected: 2,
                found: fields.len(),
            });
        }
        let parse = |column: usize, s: &str| -> Result<f64, CsvError> {
            s.trim().parse::<f64>().map_err(|e| CsvError::BadNumber {
                path: p.clone(),
                line: i + 1,
                column,
                reason: e.to_string(),
            })
        };
        xs.push(parse(1, fields[0])?);
        ys.push(parse(2, fields[1])?);
    }
    if xs.is_empty() {
        return Err(CsvError::Empty { path: p });
    }
    Ok((header.to_string(), xs, ys))
}

/// Read a spectrum written by [`write_spectrum`]; the axis kind is taken
/// from the header (unknown headers are read as detuning).
pub fn read_spectrum(path: &Path) -> Result<Spectrum, CsvError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| CsvError::Io { path: path_str(path), source })?;
    let (header, xs, ys) = parse_two_columns(path, &text)?;
    let axis_label = header.split(',').next().unwrap_or("");
    let kind = axis_kind_from_header(axis_label).unwrap_or(AxisKind::Detuning);
    let increasing = xs.len() < 2 || xs[1] > xs[0];
    for i in 1..xs.len() {
        let ok = if increasing { xs[i] > xs[i - 1] } else { xs[i] < xs[i - 1] };
        if !ok {
            return Err(CsvError::NonMonotonic { path: path_str(path), line: i + 2 });
        }
    }
    Ok(Spectrum::new(xs, ys, kind)?)
}

/// Read a time/value series; the axis must be strictly increasing.
pub fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CsvError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| CsvError::Io { path: path_str(path), source })?;
    let (_, xs, ys) = parse_two_columns(path, &text)?;
    for i in 1..xs.len() {
        if xs[i] <= xs[i - 1] {
            return Err(CsvError::NonMonotonic { path: path_str(path), line: i + 2 });
        }
    }
    Ok((xs, ys))
}
