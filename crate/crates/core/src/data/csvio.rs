use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::Series;
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

/// Cell contents treated as missing besides the empty string.
pub const MISSING_TOKEN: &str = "NaN";

/// Reads a header-first CSV with one column per attribute and one row per
/// time step. Empty cells and `NaN` become missing.
pub fn load_csv(path: &Path) -> Result<Series> {
    let file = File::open(path).map_err(|e| DmaeError::io(path, e))?;
    read_series(file)
}

pub fn read_series<R: std::io::Read>(reader: R) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| DmaeError::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let n = names.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut masks: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => DmaeError::Data(format!(
                "ragged row {}: expected {expected_len} fields, found {len}",
                row + 1
            )),
            _ => DmaeError::Data(format!("row {}: {e}", row + 1)),
        })?;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell == MISSING_TOKEN {
                columns[col].push(0.0);
                masks[col].push(0.0);
            } else {
                let v: f64 = cell.parse().map_err(|_| DmaeError::Parse {
                    row: row + 1,
                    column: col + 1,
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(DmaeError::Parse {
                        row: row + 1,
                        column: col + 1,
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                columns[col].push(v);
                masks[col].push(1.0);
            }
        }
    }
    let len = columns.first().map_or(0, Vec::len);
    let values = Tensor::from_vec(&[n, len], columns.concat())?;
    let mask = Tensor::from_vec(&[n, len], masks.concat())?;
    Series::new(names, values, mask)
}

/// Fixed nine-significant-digit rendering used by every emitted CSV.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.8e}")
    }
}

/// Writes a series with missing entries as empty cells.
pub fn write_series(path: &Path, series: &Series) -> Result<()> {
    let file = File::create(path).map_err(|e| DmaeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| DmaeError::io(path, e);
    writeln!(w, "{}", series.names.join(",")).map_err(io)?;
    let (n, len) = (series.num_attributes(), series.len());
    let mut line = String::new();
    for t in 0..len {
        line.clear();
        for a in 0..n {
            if a > 0 {
                line.push(',');
            }
            if series.mask.at2(a, t) == 1.0 {
                line.push_str(&fmt_float(series.values.at2(a, t)));
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes rows of floats under a header.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| DmaeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| DmaeError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| if v.is_nan() { String::new() } else { fmt_float(v) }).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
