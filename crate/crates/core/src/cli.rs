//! The `mssrc` command line.
//!
//! Every subcommand reads one JSON [`RunConfig`] (`--config`, optional; all
//! fields have defaults) and writes into the directory given by `--out`.
//! Files are written whole and atomically. Each command leaves a JSON sidecar
//! that repeats the configuration with every default filled in.
//!
//! | command    | reads        | writes                                                     |
//! |------------|--------------|------------------------------------------------------------|
//! | `generate` |              | `clean.csv`, `noisy.csv` + `noise.csv` if noise is set, `generate.json` |
//! | `denoise`  | `--in` CSV   | `denoised.csv`, `residual.csv`, `report.json`, `trials.csv` when tuned |
//! | `tune`     | `--in` CSV   | `trials.csv`, `tune.json`                                  |
//! | `bench`    |              | `grid.csv`, `cells/cell_NNN.json`, `bench.json`            |

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::denoiser::{mssrc, DenoiseConfig};
use crate::error::{Error, Result};
use crate::hyperopt::{tune, SearchSpace, TuneOutcome, TuneSettings};
use crate::metrics::{bench_grid, BenchSpec, BenchTuning, SignalFamily};
use crate::series::TimeSeriesMatrix;
use crate::signals::{add_correlated_noise, NoiseParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status for each failure class.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const BENCH_FAILED: i32 = 5;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Construction(_) => exit::CONFIG,
        Error::Data(_)
        | Error::Io { .. }
        | Error::DimensionMismatch(_)
        | Error::SeriesTooShort { .. }
        | Error::CannotTargetSnr(_) => exit::DATA,
        Error::IntegrationDiverged { .. }
        | Error::Numerical(_)
        | Error::RankDeficient(_)
        | Error::TuningFailed { .. } => exit::DIVERGENCE,
        Error::Internal(_) => exit::INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mssrc",
    version,
    about = "Reservoir-computing signal separation for noisy multichannel series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a clean test signal and, if the config sets `noise`, its noisy version.
    Generate(CommonArgs),
    /// Tune (unless disabled) and denoise the series in `--in`.
    Denoise(InputArgs),
    /// Run only the hyperparameter search on `--in` and emit the trial log.
    Tune(InputArgs),
    /// Run a grid over input SNR, length and seed.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults are used for anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every seed in the config (signal, noise, reservoir, tuner;
    /// for `bench`, the seed list becomes this single seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `denoise.calibration_passes`.
    #[arg(long)]
    pub calibration_passes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV with columns `t,ch1,...,chp`.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Worker threads; all cores by default.
    #[arg(long, env = "MSSRC_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// `false` pins the hyperparameters in `denoise.esn`.
    pub enabled: bool,
    pub space: SearchSpace,
    pub settings: TuneSettings,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            space: SearchSpace::default(),
            settings: TuneSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchAxes {
    pub input_snr_db: Vec<f64>,
    pub lengths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for BenchAxes {
    fn default() -> Self {
        Self {
            input_snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            lengths: vec![2000, 10000, 20000, 40000],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a command needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub signal: SignalFamily,
    /// Injected by `generate` when set; `bench` takes only the correlation.
    pub noise: Option<NoiseParams>,
    pub denoise: DenoiseConfig,
    pub tuning: TuningConfig,
    pub bench: BenchAxes,
    /// Sample interval attached to series read from CSV.
    pub input_dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            signal: SignalFamily::Sinusoid(Default::default()),
            noise: None,
            denoise: DenoiseConfig::default(),
            tuning: TuningConfig::default(),
            bench: BenchAxes::default(),
            input_dt: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_json(&text, &p.display().to_string())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let config_err = |e: Error| Error::Config(e.to_string());
        match &self.signal {
            SignalFamily::Ks(p) => p.validate().map_err(config_err)?,
            SignalFamily::Sinusoid(p) => p.validate().map_err(config_err)?,
        }
        self.denoise.validate().map_err(config_err)?;
        if self.tuning.enabled {
            self.tuning.space.validate().map_err(config_err)?;
            self.tuning.settings.validate().map_err(config_err)?;
        }
        if !(self.input_dt > 0.0 && self.input_dt.is_finite()) {
            return Err(Error::Config(format!(
                "input_dt must be positive, got {}",
                self.input_dt
            )));
        }
        Ok(())
    }

    fn apply(&mut self, args: &CommonArgs) -> Result<()> {
        if let Some(seed) = args.seed {
            if let SignalFamily::Ks(p) = &mut self.signal {
                p.seed = seed;
            }
            if let Some(n) = &mut self.noise {
                n.seed = seed;
            }
            self.denoise.esn.seed = seed;
            self.tuning.settings.seed = seed;
            self.bench.seeds = vec![seed];
        }
        if let Some(passes) = args.calibration_passes {
            self.denoise.calibration_passes = passes;
        }
        if let SignalFamily::Sinusoid(p) = &mut self.signal {
            *p = p.resolved();
        }
        self.validate()
    }

    fn bench_spec(&self) -> BenchSpec {
        BenchSpec {
            signal: self.signal.clone(),
            input_snr_db: self.bench.input_snr_db.clone(),
            lengths: self.bench.lengths.clone(),
            seeds: self.bench.seeds.clone(),
            noise_correlation: self
                .noise
                .as_ref()
                .map_or(NoiseParams::default().correlation, |n| n.correlation),
            denoise: self.denoise.clone(),
            tuning: self.tuning.enabled.then(|| BenchTuning {
                space: self.tuning.space,
                settings: self.tuning.settings.clone(),
            }),
        }
    }
}

/// Parse `args` (program name first), run, and return the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::SUCCESS
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn prepare(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply(args)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    Ok(cfg)
}

fn cmd_generate(args: &CommonArgs) -> Result<i32> {
    let cfg = prepare(args)?;
    let clean = match &cfg.signal {
        SignalFamily::Ks(p) => crate::signals::generate_ks(p)?,
        SignalFamily::Sinusoid(p) => crate::signals::generate_sinusoid(p)?,
    };
    write_series(&args.out.join("clean.csv"), &clean)?;
    let mut sidecar = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "generate",
        "config": cfg,
        "rows": clean.n_rows(),
        "channels": clean.n_channels(),
    });
    if let Some(noise) = &cfg.noise {
        let noisy = add_correlated_noise(&clean, noise)?;
        write_series(&args.out.join("noisy.csv"), &noisy.noisy)?;
        write_series(&args.out.join("noise.csv"), &noisy.noise)?;
        sidecar["realized_input_snr_db"] = json!(noisy.realized_input_snr_db);
        sidecar["noise_scale"] = json!(noisy.noise_scale);
    }
    write_json(&args.out.join("generate.json"), &sidecar)?;
    Ok(exit::SUCCESS)
}

fn read_input(path: &Path, cfg: &RunConfig) -> Result<TimeSeriesMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let x = TimeSeriesMatrix::read_csv(std::io::BufReader::new(file), cfg.input_dt)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(x)
}

fn run_tuning(x: &TimeSeriesMatrix, cfg: &RunConfig) -> Result<TuneOutcome> {
    tune(x, &cfg.denoise, &cfg.tuning.space, &cfg.tuning.settings)
}

fn write_trials(path: &Path, outcome: &TuneOutcome) -> Result<()> {
    let mut buf = Vec::new();
    outcome.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

fn cmd_denoise(args: &InputArgs) -> Result<i32> {
    let mut cfg = prepare(&args.common)?;
    let x = read_input(&args.input, &cfg)?;
    let out = &args.common.out;
    let tuned = if cfg.tuning.enabled {
        let outcome = run_tuning(&x, &cfg)?;
        write_trials(&out.join("trials.csv"), &outcome)?;
        cfg.denoise.esn = outcome.best.clone();
        Some(outcome)
    } else {
        None
    };
    let result = mssrc(&x, &cfg.denoise)?;
    write_series(&out.join("denoised.csv"), &result.q_hat)?;
    write_series(&out.join("residual.csv"), &result.xi_hat)?;

    let tentative_only = result.calibration_passes == 0;
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "denoise",
        "config": cfg,
        "input": args.input.display().to_string(),
        "rows": x.n_rows(),
        "channels": x.n_channels(),
        "reconstructed_range": [result.split.washout_end + 1, result.split.last],
        "tentative_only": tentative_only,
        "calibration_passes": result.calibration_passes,
        "training_error": result.training_error,
        "tentative_training_error": result.tentative_training_error,
        "hyperparameters": cfg.denoise.esn,
        "tuned": tuned.is_some(),
    });
    if let Some(t) = &tuned {
        report["tuning"] = json!({
            "best_objective": t.best_objective,
            "trials": t.trials.len(),
            "failed_trials": t.trials.iter().filter(|r| r.failed()).count(),
        });
    }
    if let (Some(est), Some(cal)) = (&result.noise_estimate, &result.calibration) {
        report["noise_variances"] = json!(est.noise_variances.as_slice());
        report["signal_variances"] = json!(cal.signal_variances.as_slice());
        report["weights"] = json!(cal.weights.as_slice());
        report["weight_floor"] = json!(cal.weight_floor);
    }
    write_json(&out.join("report.json"), &report)?;
    Ok(exit::SUCCESS)
}

fn cmd_tune(args: &InputArgs) -> Result<i32> {
    let cfg = prepare(&args.common)?;
    let x = read_input(&args.input, &cfg)?;
    let outcome = run_tuning(&x, &cfg)?;
    write_trials(&args.common.out.join("trials.csv"), &outcome)?;
    write_json(
        &args.common.out.join("tune.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "tune",
            "config": cfg,
            "input": args.input.display().to_string(),
            "best": outcome.best,
            "best_objective": outcome.best_objective,
            "trials": outcome.trials,
        }),
    )?;
    Ok(exit::SUCCESS)
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let cfg = prepare(&args.common)?;
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    let spec = cfg.bench_spec();
    let grid = bench_grid(&spec, args.jobs)?;
    let out = &args.common.out;
    let mut buf = Vec::new();
    grid.write_csv(&mut buf)?;
    write_atomic(&out.join("grid.csv"), &buf)?;
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    for (i, cell) in grid.cells.iter().enumerate() {
        write_json(&cells_dir.join(format!("cell_{i:03}.json")), cell)?;
    }
    let failed = grid.cells.iter().filter(|c| c.failed()).count();
    write_json(
        &out.join("bench.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "bench",
            "config": cfg,
            "cells": grid.cells.len(),
            "failed_cells": failed,
        }),
    )?;
    if grid.all_failed() {
        eprintln!("error: all {} benchmark cells failed", grid.cells.len());
        return Ok(exit::BENCH_FAILED);
    }
    if failed > 0 {
        log::warn!("{failed} of {} benchmark cells failed", grid.cells.len());
    }
    Ok(exit::SUCCESS)
}

fn write_series(path: &Path, series: &TimeSeriesMatrix) -> Result<()> {
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf =
        serde_json::to_vec_pretty(value).map_err(|e| Error::Internal(format!("json: {e}")))?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

/// Write to a temporary file in the target directory, then rename over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::SeriesTooShort {
                len: 1,
                required: 2,
                reason: String::new()
            }),
            3
        );
        assert_eq!(
            exit_code(&Error::IntegrationDiverged { step: 3, dt: 0.5 }),
            4
        );
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = RunConfig::from_json("{}", "inline").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let err =
            RunConfig::from_json(r#"{"denoise": {"esn": {"leak": 0.3}}}"#, "inline").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("leak") && msg.contains("line 1"), "{msg}");
        let bad_version = RunConfig::from_json(r#"{"schema_version": 2}"#, "inline");
        assert!(matches!(bad_version, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err =
            RunConfig::from_json(r#"{"denoise": {"train_fraction": 1.5}}"#, "inline").unwrap_err();
        assert_eq!(exit_code(&err), exit::CONFIG);
        let nyquist = r#"{"signal": {"family": "sinusoid", "frequencies": [0.6], "channels": 1}}"#;
        assert!(matches!(
            RunConfig::from_json(nyquist, "inline"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overrides_apply_to_every_seed() {
        let mut cfg = RunConfig::from_json(
            r#"{"signal": {"family": "ks"}, "noise": {"seed": 3}, "bench": {"input_snr_db": [0], "lengths": [10], "seeds": [1, 2]}}"#,
            "inline",
        )
        .unwrap();
        let args = CommonArgs {
            config: None,
            out: PathBuf::new(),
            seed: Some(9),
            calibration_passes: Some(0),
        };
        cfg.apply(&args).unwrap();
        let SignalFamily::Ks(ks) = &cfg.signal else {
            panic!()
        };
        assert_eq!(ks.seed, 9);
        assert_eq!(cfg.noise.unwrap().seed, 9);
        assert_eq!(cfg.denoise.esn.seed, 9);
        assert_eq!(cfg.bench.seeds, vec![9]);
        assert_eq!(cfg.denoise.calibration_passes, 0);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"first version, longer").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
