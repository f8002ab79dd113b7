use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

use super::SensorSeries;

/// Reads `t,<name1>,…,<nameS>` CSV with one row per time stamp.
///
/// Row and column numbers in errors are 1-based and count the header as row 1.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<SensorSeries<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: header.len(),
            reason: "header must name a time column and at least one channel".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let s = names.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); s];
    let mut time = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(csv_err)?;
        if record.len() != s + 1 {
            return Err(Error::Parse {
                row,
                column: record.len(),
                reason: format!("expected {} fields, found {}", s + 1, record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                reason: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: col + 1, reason: format!("non-finite cell {cell:?}") });
            }
            if col == 0 {
                time.push(v);
            } else {
                rows[col - 1].push(v);
            }
        }
    }
    if time.len() < 2 {
        return Err(Error::Parse { row: time.len() + 1, column: 1, reason: "need at least two data rows".into() });
    }
    if let Some(k) = time.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Parse { row: k + 3, column: 1, reason: "time column is not monotone".into() });
    }
    let n = time.len();
    let data = rows.concat().into_iter().map(T::of).collect();
    SensorSeries::with_time(Matrix::from_vec(s, n, data)?, names, time)
}

/// Writes the series in the format read by [`load_csv`]. Values are printed in
/// shortest round-trip form so a reload is exact.
pub fn save_csv<T: Scalar>(series: &SensorSeries<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(out, "t")?;
    for name in series.channel_names() {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    let values = series.values();
    for (j, t) in series.time().iter().enumerate() {
        write!(out, "{t}")?;
        for i in 0..series.n_sensors() {
            write!(out, ",{}", values.get(i, j))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { row, column: 0, reason: format!("{other:?}") },
    }
}
