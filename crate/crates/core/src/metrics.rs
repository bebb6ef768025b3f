//! SNR reports and the benchmark grid.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeriesMatrix;

mod bench;

pub use bench::{
    bench_grid, BenchCell, BenchGrid, BenchSpec, BenchTuning, RunRecord, SignalFamily,
};

/// Reported for channels whose estimate is exact.
pub const SNR_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// `None` where the clean channel has zero power.
    pub per_channel_db: Vec<Option<f64>>,
    /// Mean over the defined channels; `None` if there are none.
    pub average_db: Option<f64>,
    pub n_samples_used: usize,
    pub index_range: (usize, usize),
    pub capped_channels: Vec<usize>,
    pub undefined_channels: Vec<usize>,
}

impl SnrReport {
    pub fn is_degenerate(&self) -> bool {
        self.average_db.is_none()
    }
}

/// Per channel `10 log10(Σ q² / Σ (q - q̂)²)` over the time indices in `range`
/// that both series cover.
pub fn snr_db(
    clean: &TimeSeriesMatrix,
    estimate: &TimeSeriesMatrix,
    range: RangeInclusive<usize>,
) -> Result<SnrReport> {
    if clean.n_channels() != estimate.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "clean has {} channels, estimate {}",
            clean.n_channels(),
            estimate.n_channels()
        )));
    }
    let lo = (*range.start()).max(clean.start()).max(estimate.start());
    let hi = (*range.end()).min(clean.end()).min(estimate.end());
    if range.is_empty() || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "empty comparison range: requested {}..={}, clean covers {}..={}, estimate {}..={}",
            range.start(),
            range.end(),
            clean.start(),
            clean.end(),
            estimate.start(),
            estimate.end()
        )));
    }
    let n = hi - lo + 1;
    let q = clean.values().rows(lo - clean.start(), n);
    let q_hat = estimate.values().rows(lo - estimate.start(), n);
    let mut per_channel = Vec::with_capacity(clean.n_channels());
    let mut capped = Vec::new();
    let mut undefined = Vec::new();
    for j in 0..clean.n_channels() {
        let signal: f64 = q.column(j).norm_squared();
        let error: f64 = q
            .column(j)
            .iter()
            .zip(q_hat.column(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if signal == 0.0 {
            undefined.push(j);
            per_channel.push(None);
        } else if error == 0.0 || 10.0 * (signal / error).log10() >= SNR_CAP_DB {
            capped.push(j);
            per_channel.push(Some(SNR_CAP_DB));
        } else {
            per_channel.push(Some(10.0 * (signal / error).log10()));
        }
    }
    let defined: Vec<f64> = per_channel.iter().flatten().copied().collect();
    let average_db = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(SnrReport {
        per_channel_db: per_channel,
        average_db,
        n_samples_used: n,
        index_range: (lo, hi),
        capped_channels: capped,
        undefined_channels: undefined,
    })
}
