//! Surrogate-assisted search over the continuous reservoir hyperparameters.
//!
//! The search runs in the unit cube, one axis per tuned field (log-mapped for
//! `input_scaling` and `ridge`). A Latin-hypercube design seeds a cubic radial
//! basis function model of the log objective; each further trial is the
//! candidate with the best mix of low predicted objective and distance from
//! already evaluated points.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::{fit_predict, DenoiseConfig};
use crate::error::{Error, Result};
use crate::reservoir::{EsnConfig, ReservoirTopology, Standardizer};
use crate::series::TimeSeriesMatrix;

/// Number of tuned fields.
pub const DIMENSIONS: usize = 4;

/// Closed interval for one tuned field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
    /// Search uniformly in `log(value)` instead of `value`.
    #[serde(default)]
    pub log: bool,
}

impl Bounds {
    pub const fn linear(low: f64, high: f64) -> Self {
        Self {
            low,
            high,
            log: false,
        }
    }

    pub const fn log(low: f64, high: f64) -> Self {
        Self {
            low,
            high,
            log: true,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ordered = self.low < self.high && self.low.is_finite() && self.high.is_finite();
        if !ordered || (self.log && self.low <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bounds for {name} must satisfy low < high{}, got [{}, {}]",
                if self.log { " and low > 0" } else { "" },
                self.low,
                self.high
            )));
        }
        Ok(())
    }

    /// Map `u ∈ [0, 1]` onto the interval.
    pub fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if self.log {
            (self.low.ln() + u * (self.high.ln() - self.low.ln()))
                .exp()
                .clamp(self.low, self.high)
        } else {
            (self.low + u * (self.high - self.low)).clamp(self.low, self.high)
        }
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        let u = if self.log {
            (v.ln() - self.low.ln()) / (self.high.ln() - self.low.ln())
        } else {
            (v - self.low) / (self.high - self.low)
        };
        u.clamp(0.0, 1.0)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

/// Bounds of the tuned fields. Size, connectivity, washout and seed stay at
/// the base configuration's values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub leak_rate: Bounds,
    pub spectral_radius: Bounds,
    pub input_scaling: Bounds,
    pub ridge: Bounds,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            leak_rate: Bounds::linear(0.05, 1.0),
            spectral_radius: Bounds::linear(0.3, 1.4),
            input_scaling: Bounds::log(0.05, 2.0),
            ridge: Bounds::log(1e-9, 1e-1),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        self.leak_rate.validate("leak_rate")?;
        self.spectral_radius.validate("spectral_radius")?;
        self.input_scaling.validate("input_scaling")?;
        self.ridge.validate("ridge")?;
        if self.leak_rate.low <= 0.0 || self.leak_rate.high > 1.0 {
            return Err(Error::InvalidArgument(
                "leak_rate bounds must lie in (0, 1]".into(),
            ));
        }
        if self.spectral_radius.low <= 0.0 || self.input_scaling.low <= 0.0 || self.ridge.low < 0.0
        {
            return Err(Error::InvalidArgument(
                "spectral_radius and input_scaling bounds must be positive, ridge non-negative"
                    .into(),
            ));
        }
        Ok(())
    }

    fn axes(&self) -> [&Bounds; DIMENSIONS] {
        [
            &self.leak_rate,
            &self.spectral_radius,
            &self.input_scaling,
            &self.ridge,
        ]
    }

    /// `base` with the tuned fields taken from unit-cube point `u`.
    pub fn config_at(&self, base: &EsnConfig, u: &[f64]) -> EsnConfig {
        EsnConfig {
            leak_rate: self.leak_rate.from_unit(u[0]),
            spectral_radius: self.spectral_radius.from_unit(u[1]),
            input_scaling: self.input_scaling.from_unit(u[2]),
            ridge: self.ridge.from_unit(u[3]),
            ..base.clone()
        }
    }

    pub fn unit_point(&self, config: &EsnConfig) -> [f64; DIMENSIONS] {
        [
            self.leak_rate.to_unit(config.leak_rate),
            self.spectral_radius.to_unit(config.spectral_radius),
            self.input_scaling.to_unit(config.input_scaling),
            self.ridge.to_unit(config.ridge),
        ]
    }

    pub fn contains(&self, config: &EsnConfig) -> bool {
        let values = [
            config.leak_rate,
            config.spectral_radius,
            config.input_scaling,
            config.ridge,
        ];
        self.axes().iter().zip(values).all(|(b, v)| b.contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Surrogate,
    /// Uniform random trials after the initial design.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    /// Total number of objective evaluations.
    pub budget: usize,
    /// Size of the Latin-hypercube design; `None` means `budget / 3`.
    pub initial_design: Option<usize>,
    pub mode: SearchMode,
    /// Random candidates scored per surrogate step.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            budget: 60,
            initial_design: None,
            mode: SearchMode::Surrogate,
            candidates: 500,
            seed: 0,
        }
    }
}

impl TuneSettings {
    pub fn validate(&self) -> Result<()> {
        if self.budget < 4 * DIMENSIONS {
            return Err(Error::InvalidArgument(format!(
                "tuning budget must be at least {} (4 per tuned field), got {}",
                4 * DIMENSIONS,
                self.budget
            )));
        }
        let initial = self.initial_size();
        if initial == 0 || initial > self.budget {
            return Err(Error::InvalidArgument(format!(
                "initial design of {initial} trials must be in 1..={}",
                self.budget
            )));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidArgument(
                "candidate pool must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_size(&self) -> usize {
        self.initial_design.unwrap_or(self.budget / 3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 0-based evaluation order.
    pub index: usize,
    pub config: EsnConfig,
    /// Validation one-step MSE in standardized units; `None` if the trial failed.
    pub objective: Option<f64>,
    /// 1 for the best trial; failed trials rank after all successful ones.
    pub rank: usize,
    /// Whether the trial came from the initial design.
    pub initial: bool,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.objective.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: EsnConfig,
    pub best_objective: f64,
    pub trials: Vec<TrialRecord>,
}

impl TuneOutcome {
    /// Running minimum of the objective, failed trials carrying the previous value.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                if let Some(o) = t.objective {
                    best = best.min(o);
                }
                best
            })
            .collect()
    }

    /// Columns `trial,leak_rate,spectral_radius,input_scaling,ridge,objective`;
    /// a failed trial has an empty objective.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
        w.write_record([
            "trial",
            "leak_rate",
            "spectral_radius",
            "input_scaling",
            "ridge",
            "objective",
        ])
        .map_err(csv_err)?;
        for t in &self.trials {
            let c = &t.config;
            w.write_record([
                t.index.to_string(),
                format!("{:.16e}", c.leak_rate),
                format!("{:.16e}", c.spectral_radius),
                format!("{:.16e}", c.input_scaling),
                format!("{:.16e}", c.ridge),
                t.objective.map(|o| format!("{o:.16e}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::Data(format!("csv flush: {e}")))?;
        Ok(())
    }
}

/// Minimize `objective` over `space` around `base`. The objective sees
/// complete configurations; an `Err` or non-finite value marks the trial
/// failed and the search continues.
pub fn search<F>(
    space: &SearchSpace,
    base: &EsnConfig,
    settings: &TuneSettings,
    mut objective: F,
) -> Result<TuneOutcome>
where
    F: FnMut(&EsnConfig) -> Result<f64>,
{
    space.validate()?;
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let initial = settings.initial_size();
    let mut points: Vec<[f64; DIMENSIONS]> = latin_hypercube(initial, &mut rng);
    let mut values: Vec<Option<f64>> = Vec::with_capacity(settings.budget);
    let mut trials = Vec::with_capacity(settings.budget);

    let mut evaluate =
        |index: usize, u: &[f64; DIMENSIONS], initial: bool, trials: &mut Vec<TrialRecord>| {
            let config = space.config_at(base, u);
            let (value, error) = match objective(&config) {
                Ok(v) if v.is_finite() => (Some(v), None),
                Ok(v) => (None, Some(format!("objective is {v}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            log::debug!("trial {index}: {config:?} -> {value:?}");
            trials.push(TrialRecord {
                index,
                config,
                objective: value,
                rank: 0,
                initial,
                error,
            });
            value
        };

    for (i, u) in points.iter().enumerate() {
        values.push(evaluate(i, u, true, &mut trials));
    }
    for i in initial..settings.budget {
        let u = match settings.mode {
            SearchMode::Random => random_point(&mut rng),
            SearchMode::Surrogate => {
                propose(&points, &values, i - initial, settings.candidates, &mut rng)
            }
        };
        values.push(evaluate(i, &u, false, &mut trials));
        points.push(u);
    }

    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| trials[i].objective.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        trials[i].rank = rank + 1;
    }
    let best = &trials[order[0]];
    match best.objective {
        Some(best_objective) => Ok(TuneOutcome {
            best: best.config.clone(),
            best_objective,
            trials,
        }),
        None => Err(Error::TuningFailed {
            trials: trials.len(),
        }),
    }
}

/// Tune the reservoir of `base` on `x`: each trial trains on the training part
/// and scores the one-step MSE on the validation part, in standardized units.
pub fn tune(
    x: &TimeSeriesMatrix,
    base: &DenoiseConfig,
    space: &SearchSpace,
    settings: &TuneSettings,
) -> Result<TuneOutcome> {
    base.validate()?;
    let split = base.split(x.start(), x.n_rows())?;
    let standardizer = Standardizer::fit(x);
    if standardizer.constant.iter().all(|c| *c) {
        return Err(Error::InvalidArgument(
            "every channel is constant; there is nothing to tune on".into(),
        ));
    }
    let z = standardizer.forward(x)?;
    let topology = ReservoirTopology::generate(&base.esn, x.n_channels())?;
    let target = z.slice(split.validation())?;
    search(space, &base.esn, settings, |config| {
        let predicted = fit_predict(&z, &topology, config, &split)?.slice(split.validation())?;
        let diff = target.values() - predicted.values();
        Ok(diff.norm_squared() / diff.len() as f64)
    })
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; DIMENSIONS] {
    std::array::from_fn(|_| rng.random::<f64>())
}

/// `n` points, one in each of `n` equal strata per axis, strata permuted
/// independently per axis.
fn latin_hypercube(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; DIMENSIONS]> {
    let mut points = vec![[0.0; DIMENSIONS]; n];
    for d in 0..DIMENSIONS {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (point, s) in points.iter_mut().zip(strata) {
            point[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// Cubic RBF interpolant with a linear polynomial tail.
struct Surrogate {
    centers: Vec<[f64; DIMENSIONS]>,
    coef: DVector<f64>,
    tail: DVector<f64>,
}

impl Surrogate {
    fn fit(centers: Vec<[f64; DIMENSIONS]>, values: &[f64]) -> Option<Self> {
        let n = centers.len();
        let m = n + DIMENSIONS + 1;
        let mut a = DMatrix::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = distance(&centers[i], &centers[j]).powi(3);
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
            for d in 0..DIMENSIONS {
                a[(i, n + 1 + d)] = centers[i][d];
                a[(n + 1 + d, i)] = centers[i][d];
            }
        }
        let mut rhs = DVector::zeros(m);
        rhs.rows_mut(0, n).copy_from_slice(values);
        // A tiny nugget keeps near-duplicate centers from making the system singular.
        let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for i in 0..n {
            a[(i, i)] += 1e-10 * scale;
        }
        let solution = a.lu().solve(&rhs)?;
        if !solution.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self {
            coef: solution.rows(0, n).into_owned(),
            tail: solution.rows(n, DIMENSIONS + 1).into_owned(),
            centers,
        })
    }

    fn predict(&self, u: &[f64; DIMENSIONS]) -> f64 {
        let rbf: f64 = self
            .centers
            .iter()
            .zip(self.coef.iter())
            .map(|(c, w)| w * distance(c, u).powi(3))
            .sum();
        let linear: f64 = (0..DIMENSIONS).map(|d| self.tail[d + 1] * u[d]).sum();
        rbf + self.tail[0] + linear
    }
}

fn distance(a: &[f64; DIMENSIONS], b: &[f64; DIMENSIONS]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Weight on the surrogate value in the candidate score, cycled per step;
/// the remainder rewards distance from evaluated points.
const SURROGATE_WEIGHTS: [f64; 4] = [0.3, 0.5, 0.8, 0.95];

fn propose(
    points: &[[f64; DIMENSIONS]],
    values: &[Option<f64>],
    step: usize,
    pool: usize,
    rng: &mut ChaCha8Rng,
) -> [f64; DIMENSIONS] {
    let (ok_points, ok_values): (Vec<[f64; DIMENSIONS]>, Vec<f64>) = points
        .iter()
        .zip(values)
        .filter_map(|(p, v)| v.map(|v| (*p, v.max(f64::MIN_POSITIVE).ln())))
        .unzip();
    if ok_points.len() < DIMENSIONS + 2 {
        return random_point(rng);
    }
    let Some(surrogate) = Surrogate::fit(ok_points.clone(), &ok_values) else {
        return random_point(rng);
    };
    let best = ok_points[ok_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)];

    // Half the pool perturbs the incumbent, half covers the whole cube.
    let sigma = 0.2 * 0.5f64.powi((step / 8) as i32).max(0.05);
    let candidates: Vec<[f64; DIMENSIONS]> = (0..pool)
        .map(|i| {
            if i % 2 == 0 {
                std::array::from_fn(|d| {
                    let z: f64 = StandardNormal.sample(rng);
                    (best[d] + sigma * z).clamp(0.0, 1.0)
                })
            } else {
                random_point(rng)
            }
        })
        .collect();

    let predicted: Vec<f64> = candidates.iter().map(|c| surrogate.predict(c)).collect();
    let nearest: Vec<f64> = candidates
        .iter()
        .map(|c| {
            points
                .iter()
                .map(|p| distance(c, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let normalize = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        v.iter()
            .map(|x| if span > 0.0 { (x - lo) / span } else { 1.0 })
            .collect()
    };
    let s = normalize(&predicted);
    let d = normalize(&nearest);
    let weight = SURROGATE_WEIGHTS[step % SURROGATE_WEIGHTS.len()];
    let mut best_score = f64::INFINITY;
    let mut choice = candidates[0];
    for (i, c) in candidates.iter().enumerate() {
        // Skip points on top of an evaluated one.
        if nearest[i] < 1e-6 {
            continue;
        }
        let score = weight * s[i] + (1.0 - weight) * (1.0 - d[i]);
        if score < best_score {
            best_score = score;
            choice = *c;
        }
    }
    choice
}
