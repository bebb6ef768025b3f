//! Benchmark grids over input SNR, series length and seed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{snr_db, SnrReport};
use crate::denoiser::{mssrc, DenoiseConfig};
use crate::error::{Error, Result};
use crate::hyperopt::{tune, SearchSpace, TuneSettings};
use crate::reservoir::EsnConfig;
use crate::series::TimeSeriesMatrix;
use crate::signals::{
    add_correlated_noise, generate_ks, generate_sinusoid, KsParams, NoiseParams, SinusoidParams,
};

/// Signal generator of a grid. The length axis overrides the sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalFamily {
    Ks(KsParams),
    Sinusoid(SinusoidParams),
}

impl SignalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ks(_) => "ks",
            Self::Sinusoid(_) => "sinusoid",
        }
    }

    /// The clean series of `length` rows for `seed`. Sinusoids ignore the seed.
    pub fn generate(&self, length: usize, seed: u64) -> Result<TimeSeriesMatrix> {
        match self {
            Self::Ks(p) => generate_ks(&KsParams {
                n_steps: length,
                seed,
                ..p.clone()
            }),
            Self::Sinusoid(p) => generate_sinusoid(&SinusoidParams {
                n_samples: length,
                ..p.clone()
            }),
        }
    }
}

/// Hyperparameter search run on each noisy series before denoising.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchTuning {
    pub space: SearchSpace,
    pub settings: TuneSettings,
}

/// A grid: every `(input SNR, length)` cell is run once per seed. Seed `s`
/// drives the signal's initial condition, the noise draw, the reservoir and
/// the tuner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub signal: SignalFamily,
    pub input_snr_db: Vec<f64>,
    pub lengths: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_correlation")]
    pub noise_correlation: f64,
    #[serde(default)]
    pub denoise: DenoiseConfig,
    /// `None` runs with `denoise.esn` as given.
    #[serde(default)]
    pub tuning: Option<BenchTuning>,
}

fn default_correlation() -> f64 {
    NoiseParams::default().correlation
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_snr_db.is_empty() || self.lengths.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "input_snr_db, lengths and seeds must all be non-empty".into(),
            ));
        }
        if let Some(bad) = self.input_snr_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "input SNR {bad} is not finite"
            )));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::InvalidArgument(format!(
                "noise_correlation must be in [0, 1), got {}",
                self.noise_correlation
            )));
        }
        self.denoise.validate()?;
        if let Some(t) = &self.tuning {
            t.space.validate()?;
            t.settings.validate()?;
        }
        Ok(())
    }
}

/// One seed of one cell. `error` is set iff the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub realized_input_snr_db: Option<f64>,
    pub tentative: Option<SnrReport>,
    pub calibrated: Option<SnrReport>,
    pub esn: Option<EsnConfig>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub family: String,
    pub input_snr_db: f64,
    pub length: usize,
    /// Means over the runs that produced a defined SNR.
    pub mean_realized_input_snr_db: Option<f64>,
    pub mean_tentative_snr_db: Option<f64>,
    pub mean_calibrated_snr_db: Option<f64>,
    pub seeds_used: Vec<u64>,
    pub runs: Vec<RunRecord>,
}

impl BenchCell {
    pub fn failed(&self) -> bool {
        self.seeds_used.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    /// Row-major over `input_snr_db`, then `lengths`.
    pub cells: Vec<BenchCell>,
}

impl BenchGrid {
    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(BenchCell::failed)
    }

    /// One row per cell; undefined means are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
        w.write_record([
            "family",
            "input_snr_db",
            "length",
            "mean_realized_input_snr_db",
            "mean_tentative_snr_db",
            "mean_calibrated_snr_db",
            "seeds_used",
            "seeds_failed",
        ])
        .map_err(csv_err)?;
        let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for c in &self.cells {
            let used: Vec<String> = c.seeds_used.iter().map(u64::to_string).collect();
            let failed: Vec<String> = c
                .runs
                .iter()
                .filter(|r| r.error.is_some())
                .map(|r| r.seed.to_string())
                .collect();
            w.write_record([
                c.family.clone(),
                format!("{}", c.input_snr_db),
                c.length.to_string(),
                num(c.mean_realized_input_snr_db),
                num(c.mean_tentative_snr_db),
                num(c.mean_calibrated_snr_db),
                used.join(" "),
                failed.join(" "),
            ])
            .map_err(csv_err)?;
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
}

/// Run every `(snr, length, seed)` combination on a pool of `jobs` threads
/// (all cores if `None`). Failed runs are recorded in their cell and the grid
/// carries on. The result does not depend on `jobs`.
pub fn bench_grid(spec: &BenchSpec, jobs: Option<usize>) -> Result<BenchGrid> {
    use rayon::prelude::*;

    spec.validate()?;
    let mut runs = Vec::new();
    for &snr in &spec.input_snr_db {
        for &length in &spec.lengths {
            for &seed in &spec.seeds {
                runs.push((snr, length, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        runs.par_iter()
            .map(|&(snr, length, seed)| {
                let record = run_one(spec, snr, length, seed);
                match &record.error {
                    Some(e) => log::warn!(
                        "{} {snr} dB, length {length}, seed {seed}: {e}",
                        spec.signal.name()
                    ),
                    None => log::info!(
                        "{} {snr} dB, length {length}, seed {seed} done",
                        spec.signal.name()
                    ),
                }
                record
            })
            .collect()
    });

    let mut records = records.into_iter();
    let mut cells = Vec::new();
    for &snr in &spec.input_snr_db {
        for &length in &spec.lengths {
            let runs: Vec<RunRecord> = records.by_ref().take(spec.seeds.len()).collect();
            cells.push(summarize(spec.signal.name(), snr, length, runs));
        }
    }
    Ok(BenchGrid { cells })
}

fn summarize(family: &str, snr: f64, length: usize, runs: Vec<RunRecord>) -> BenchCell {
    let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.error.is_none()).collect();
    let mean = |f: &dyn Fn(&RunRecord) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    BenchCell {
        family: family.to_string(),
        input_snr_db: snr,
        length,
        mean_realized_input_snr_db: mean(&|r| r.realized_input_snr_db),
        mean_tentative_snr_db: mean(&|r| r.tentative.as_ref()?.average_db),
        mean_calibrated_snr_db: mean(&|r| r.calibrated.as_ref()?.average_db),
        seeds_used: ok.iter().map(|r| r.seed).collect(),
        runs,
    }
}

fn run_one(spec: &BenchSpec, snr: f64, length: usize, seed: u64) -> RunRecord {
    let mut record = RunRecord {
        seed,
        realized_input_snr_db: None,
        tentative: None,
        calibrated: None,
        esn: None,
        error: None,
    };
    if let Err(e) = fill_run(spec, snr, length, seed, &mut record) {
        record.error = Some(e.to_string());
    }
    record
}

fn fill_run(
    spec: &BenchSpec,
    snr: f64,
    length: usize,
    seed: u64,
    record: &mut RunRecord,
) -> Result<()> {
    let clean = spec.signal.generate(length, seed)?;
    let noisy = add_correlated_noise(
        &clean,
        &NoiseParams {
            correlation: spec.noise_correlation,
            target_input_snr_db: snr,
            seed,
        },
    )?;
    record.realized_input_snr_db = Some(noisy.realized_input_snr_db);
    let mut cfg = spec.denoise.clone();
    cfg.esn.seed = seed;
    if let Some(t) = &spec.tuning {
        let settings = TuneSettings {
            seed,
            ..t.settings.clone()
        };
        cfg.esn = tune(&noisy.noisy, &cfg, &t.space, &settings)?.best;
    }
    record.esn = Some(cfg.esn.clone());
    let result = mssrc(&noisy.noisy, &cfg)?;
    let range = result.split.reconstructed();
    record.tentative = Some(snr_db(&clean, &result.tentative_q_hat, range.clone())?);
    record.calibrated = Some(snr_db(&clean, &result.q_hat, range)?);
    Ok(())
}
