//! Portable persistence: dense matrices as CSV, everything else as JSON.
//!
//! Floats are written with 17 significant digits so a write/read round trip
//! is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `a` row by row without a header.
pub fn write_matrix_csv(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..a.nrows() {
        w.write_record(a.row(i).iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless numeric CSV. `ncols` is needed for matrices without rows.
pub fn read_matrix_csv(path: &Path, ncols: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != ncols {
            return Err(Error::Parse(format!(
                "{}:{}: expected {ncols} columns, found {}",
                path.display(),
                line + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Writes a table with a header row; numeric cells go through [`fmt_f64`].
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let a = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 0.1).ln() * (j as f64 + 1.0).sqrt() / 3.0);
        write_matrix_csv(&path, &a).unwrap();
        let b = read_matrix_csv(&path, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_width_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_matrix_csv(&path, &DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(read_matrix_csv(&path, 3), Err(Error::Parse(_))));
    }
}
