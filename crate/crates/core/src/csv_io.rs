//! Numeric CSV output helpers.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Writes a dense square matrix with identifiers as header and first column.
pub fn write_matrix_csv(path: &Path, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    if ids.len() != m.nrows() || m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context: "matrix CSV".into(),
            expected: ids.len(),
            actual: m.nrows(),
        });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "asset")?;
    for id in ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for (i, id) in ids.iter().enumerate() {
        write!(out, "{id}")?;
        for j in 0..m.ncols() {
            write!(out, ",{}", fmt_f64(m[(i, j)]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`], returning the identifiers and values.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let ids: Vec<String> = reader
        .headers()?
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let p = ids.len();
    let mut values = Vec::with_capacity(p * p);
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != p + 1 {
            return Err(Error::Parse {
                row: line,
                column: record.len(),
                message: format!("expected {} fields", p + 1),
            });
        }
        for (c, cell) in record.iter().enumerate().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::MissingValue { row: line, column: c + 1 });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != p {
        return Err(Error::Dimension {
            context: format!("square matrix in {}", path.display()),
            expected: p,
            actual: rows,
        });
    }
    Ok((ids, DMatrix::from_row_slice(p, p, &values)))
}
