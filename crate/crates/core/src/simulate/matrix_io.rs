//! Data matrix files: row-major CSV (optional header line) and the `RFM1`
//! binary layout (magic, two little-endian `u64` dimensions, then row-major
//! little-endian `f64` values).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::center_rows;

const MAGIC: &[u8; 4] = b"RFM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    /// Pick by extension (`.csv`) or magic bytes.
    #[default]
    Auto,
    Csv,
    Rfm1,
}

pub fn read_csv(path: &Path) -> Result<Mat<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            // A non-numeric first data line is a header.
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(e) => return Err(Error::MatrixFormat(format!("{}: line {}: {e}", path.display(), lineno + 1))),
        }
    }
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(Error::MatrixFormat(format!("{}: no numeric rows", path.display())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::MatrixFormat(format!(
            "{}: row {} has {} columns, expected {cols}",
            path.display(),
            i + 1,
            rows[i].len()
        )));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_csv(path: &Path, x: MatRef<'_, f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..x.nrows() {
        let line: Vec<String> = (0..x.ncols()).map(|j| format!("{:e}", x[(i, j)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rfm1(path: &Path) -> Result<Mat<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::MatrixFormat(format!("{}: missing RFM1 header", path.display())));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[4 + 8 * k..12 + 8 * k].try_into().expect("8 bytes"));
    let (rows, cols) = (dim(0) as usize, dim(1) as usize);
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).and_then(|n| n.checked_add(20));
    if expected != Some(bytes.len()) {
        return Err(Error::MatrixFormat(format!(
            "{}: header says {rows}x{cols} but file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let data = &bytes[20..];
    Ok(Mat::from_fn(rows, cols, |i, j| {
        let k = 8 * (i * cols + j);
        f64::from_le_bytes(data[k..k + 8].try_into().expect("8 bytes"))
    }))
}

pub fn write_rfm1(path: &Path, x: MatRef<'_, f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(x.nrows() as u64).to_le_bytes())?;
    w.write_all(&(x.ncols() as u64).to_le_bytes())?;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            w.write_all(&x[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn detect(path: &Path) -> Result<MatrixFormat> {
    let mut head = [0u8; 4];
    let n = File::open(path)?.read(&mut head)?;
    if n == 4 && &head == MAGIC {
        Ok(MatrixFormat::Rfm1)
    } else {
        Ok(MatrixFormat::Csv)
    }
}

/// Reads an `n0 x m` data matrix (features in rows, samples in columns),
/// rejecting non-finite entries. `mean_subtract` centers each feature;
/// `rescale` divides by the root of the mean per-feature variance.
pub fn ingest_matrix(path: &Path, format: MatrixFormat, mean_subtract: bool, rescale: bool) -> Result<Mat<f64>> {
    let format = match format {
        MatrixFormat::Auto => detect(path)?,
        f => f,
    };
    let x = match format {
        MatrixFormat::Csv => read_csv(path)?,
        MatrixFormat::Rfm1 => read_rfm1(path)?,
        MatrixFormat::Auto => unreachable!(),
    };
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::MatrixFormat(format!("{}: entry ({i}, {j}) is not finite", path.display())));
            }
        }
    }
    let mut x = if mean_subtract { center_rows(x.as_ref()) } else { x };
    if rescale {
        let m = x.ncols() as f64;
        let mean_var = (0..x.nrows())
            .map(|i| {
                let mu = (0..x.ncols()).map(|j| x[(i, j)]).sum::<f64>() / m;
                (0..x.ncols()).map(|j| (x[(i, j)] - mu).powi(2)).sum::<f64>() / m
            })
            .sum::<f64>()
            / x.nrows() as f64;
        if !(mean_var > 0.0) {
            return Err(Error::MatrixFormat(format!("{}: cannot rescale a constant matrix", path.display())));
        }
        let c = 1.0 / mean_var.sqrt();
        x = Mat::from_fn(x.nrows(), x.ncols(), |i, j| c * x[(i, j)]);
    }
    Ok(x)
}
