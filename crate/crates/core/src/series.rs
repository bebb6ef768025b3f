//! The multichannel time-series container and its CSV form.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `p`-channel real series. Rows are time steps, columns are channels.
///
/// `start` is the absolute time index of the first row, so a reconstruction
/// that skips the washout can still be lined up against the series it came
/// from. `dt` is carried as metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesMatrix {
    values: DMatrix<f64>,
    dt: f64,
    start: usize,
}

impl TimeSeriesMatrix {
    pub fn new(values: DMatrix<f64>, dt: f64) -> Result<Self> {
        Self::with_start(values, dt, 0)
    }

    pub fn with_start(values: DMatrix<f64>, dt: f64, start: usize) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "time series must have at least one row and one channel, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Data(format!(
                "non-finite value at row {row}, channel {}",
                col + 1
            )));
        }
        Ok(Self { values, dt, start })
    }

    /// Build from row-major data: `rows[i][j]` is channel `j` at step `i`.
    pub fn from_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} values, expected {p}",
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]), dt)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    /// Absolute index of the last row.
    pub fn end(&self) -> usize {
        self.start + self.values.nrows() - 1
    }

    pub fn index_range(&self) -> RangeInclusive<usize> {
        self.start..=self.end()
    }

    /// The observation at absolute time index `t`.
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.values.row(t - self.start).transpose()
    }

    /// Rows with absolute indices in `range`, keeping their absolute indexing.
    pub fn slice(&self, range: RangeInclusive<usize>) -> Result<Self> {
        let (lo, hi) = (*range.start(), *range.end());
        if lo < self.start || hi > self.end() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "range {lo}..={hi} outside series indices {}..={}",
                self.start,
                self.end()
            )));
        }
        let rows = self.values.rows(lo - self.start, hi - lo + 1).into_owned();
        Ok(Self {
            values: rows,
            dt: self.dt,
            start: lo,
        })
    }

    /// Per-channel mean and population standard deviation.
    pub fn channel_stats(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_rows() as f64;
        let p = self.n_channels();
        let mut mean = DVector::zeros(p);
        let mut std = DVector::zeros(p);
        for j in 0..p {
            let col = self.values.column(j);
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        (mean, std)
    }

    /// Write the CSV layout: header `t,ch1,...,chp`, integer time index, values
    /// with 17 significant digits, LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let p = self.n_channels();
        let mut header = Vec::with_capacity(p + 1);
        header.push("t".to_string());
        header.extend((1..=p).map(|j| format!("ch{j}")));
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(p + 1);
        for i in 0..self.n_rows() {
            record.clear();
            record.push((self.start + i).to_string());
            record.extend(self.values.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::Data(format!("csv flush: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Parse the CSV layout written by [`write_csv`](Self::write_csv). The time
    /// column must be consecutive integers; its first value becomes `start`.
    pub fn read_csv<R: Read>(reader: R, dt: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.is_empty() || &header[0] != "t" {
            return Err(Error::Data("csv header must start with column `t`".into()));
        }
        let p = header.len() - 1;
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("ch{}", j + 1) {
                return Err(Error::Data(format!(
                    "csv header column {} is `{name}`, expected `ch{}`",
                    j + 2,
                    j + 1
                )));
            }
        }
        let mut data = Vec::new();
        let mut start = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = line + 2;
            if rec.len() != p + 1 {
                return Err(Error::Data(format!(
                    "line {row}: {} fields, expected {}",
                    rec.len(),
                    p + 1
                )));
            }
            let t: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {row}: bad time index `{}`", &rec[0])))?;
            let s = *start.get_or_insert(t);
            if t != s + line {
                return Err(Error::Data(format!(
                    "line {row}: time index {t} breaks the consecutive sequence"
                )));
            }
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("line {row}: bad value `{field}`")))?;
                data.push(v);
            }
        }
        let n = data.len() / p.max(1);
        if p == 0 || n == 0 {
            return Err(Error::Data("csv contains no data".into()));
        }
        Self::with_start(DMatrix::from_row_slice(n, p, &data), dt, start.unwrap_or(0))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}
