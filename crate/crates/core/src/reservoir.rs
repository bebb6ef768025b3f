//! Echo state network: random sparse reservoir, leaky-tanh state update and a
//! ridge-regression readout.
//!
//! Time alignment: the state `r(i)` is produced by driving with `x_{i-1}` and is
//! used to predict `x_i`. For a series with rows `0..=N` the state matrix has
//! `N` columns, column `c` holding `r(start + c + 1)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeriesMatrix;

/// Hyperparameters of one echo state network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    /// Number of reservoir nodes `L`.
    pub reservoir_size: usize,
    /// Leak rate `α` in `(0, 1]`.
    pub leak_rate: f64,
    /// Target largest absolute eigenvalue of the internal weights.
    pub spectral_radius: f64,
    /// Input weights are drawn from `[-input_scaling, input_scaling]`.
    pub input_scaling: f64,
    /// Fraction of nonzero internal weights.
    pub connectivity: f64,
    /// Ridge penalty `λ` on the readout.
    pub ridge: f64,
    /// Leading states excluded from readout training.
    pub washout: usize,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            reservoir_size: 500,
            leak_rate: 0.3,
            spectral_radius: 0.9,
            input_scaling: 0.5,
            connectivity: 0.02,
            ridge: 1e-6,
            washout: 100,
            seed: 0,
        }
    }
}

impl EsnConfig {
    /// Checks everything except the washout/length relation, which depends on
    /// the data and is checked where a series is at hand.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.reservoir_size == 0 {
            return bad("reservoir_size must be positive".into());
        }
        if !(self.leak_rate > 0.0 && self.leak_rate <= 1.0) {
            return bad(format!(
                "leak_rate must be in (0, 1], got {}",
                self.leak_rate
            ));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return bad(format!(
                "spectral_radius must be positive, got {}",
                self.spectral_radius
            ));
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return bad(format!(
                "input_scaling must be positive, got {}",
                self.input_scaling
            ));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return bad(format!(
                "connectivity must be in (0, 1], got {}",
                self.connectivity
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        Ok(())
    }
}

/// Compressed sparse row storage for the internal weight matrix.
#[derive(Debug, Clone, PartialEq)]
struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// `out[i] += (self * x)[i]`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o += acc;
        }
    }
}

/// The unscaled random draw behind a reservoir: sparse `[-1, 1]` internal
/// weights with their spectral radius, and dense `[-1, 1]` input weights.
///
/// Depends only on `(reservoir_size, connectivity, seed, input_dim)`, so a
/// hyperparameter search can draw it once and rescale it per trial.
#[derive(Debug, Clone)]
pub struct ReservoirTopology {
    size: usize,
    connectivity: f64,
    seed: u64,
    input_dim: usize,
    internal: CsrMatrix,
    internal_radius: f64,
    input: DMatrix<f64>,
}

impl ReservoirTopology {
    pub fn generate(config: &EsnConfig, input_dim: usize) -> Result<Arc<Self>> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument(
                "input dimension must be positive".into(),
            ));
        }
        let l = config.reservoir_size;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dense = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in 0..l {
                if rng.random::<f64>() < config.connectivity {
                    dense[(i, j)] = rng.random_range(-1.0..=1.0);
                }
            }
        }
        let input = DMatrix::from_fn(l, input_dim, |_, _| rng.random_range(-1.0..=1.0));
        let internal_radius = spectral_radius(&dense);
        if !(internal_radius > f64::MIN_POSITIVE) {
            return Err(Error::Construction(format!(
                "internal weight matrix has zero spectral radius (L = {l}, connectivity = {}); \
                 increase the size or connectivity or change the seed",
                config.connectivity
            )));
        }
        Ok(Arc::new(Self {
            size: l,
            connectivity: config.connectivity,
            seed: config.seed,
            input_dim,
            internal: CsrMatrix::from_dense(&dense),
            internal_radius,
            input,
        }))
    }

    pub fn matches(&self, config: &EsnConfig, input_dim: usize) -> bool {
        self.size == config.reservoir_size
            && self.connectivity == config.connectivity
            && self.seed == config.seed
            && self.input_dim == input_dim
    }

    /// Scale the raw draw to `config`'s spectral radius and input scaling.
    pub fn build(self: &Arc<Self>, config: &EsnConfig) -> Result<Reservoir> {
        config.validate()?;
        if !self.matches(config, self.input_dim) {
            return Err(Error::InvalidArgument(
                "config size, connectivity or seed differ from the topology".into(),
            ));
        }
        let internal = self
            .internal
            .scaled(config.spectral_radius / self.internal_radius);
        let input_weights = &self.input * config.input_scaling;
        Ok(Reservoir {
            config: config.clone(),
            input_dim: self.input_dim,
            internal,
            input_weights,
            state: DVector::zeros(self.size),
        })
    }
}

/// Largest eigenvalue modulus, from the real Schur form.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// A reservoir with concrete weights and a mutable state.
#[derive(Debug, Clone)]
pub struct Reservoir {
    config: EsnConfig,
    input_dim: usize,
    internal: CsrMatrix,
    input_weights: DMatrix<f64>,
    state: DVector<f64>,
}

/// Draw a reservoir for a `p`-channel input: sparse uniform internal weights
/// rescaled to the configured spectral radius, dense uniform input weights,
/// zero state.
pub fn init_reservoir(config: &EsnConfig, input_dim: usize) -> Result<Reservoir> {
    ReservoirTopology::generate(config, input_dim)?.build(config)
}

impl Reservoir {
    /// Assemble a reservoir from explicit weights, bypassing the random draw.
    pub fn from_weights(
        config: &EsnConfig,
        internal: DMatrix<f64>,
        input_weights: DMatrix<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let l = config.reservoir_size;
        if internal.shape() != (l, l) || input_weights.nrows() != l || input_weights.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "expected {l}x{l} internal and {l}xp input weights, got {:?} and {:?}",
                internal.shape(),
                input_weights.shape()
            )));
        }
        Ok(Self {
            config: config.clone(),
            input_dim: input_weights.ncols(),
            internal: CsrMatrix::from_dense(&internal),
            input_weights,
            state: DVector::zeros(l),
        })
    }

    pub fn config(&self) -> &EsnConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn size(&self) -> usize {
        self.config.reservoir_size
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, state: DVector<f64>) -> Result<()> {
        if state.len() != self.size() {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, reservoir has {} nodes",
                state.len(),
                self.size()
            )));
        }
        self.state = state;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    pub fn internal_weights(&self) -> DMatrix<f64> {
        self.internal.to_dense()
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn nonzero_internal(&self) -> usize {
        self.internal.values.len()
    }

    /// One leaky update `r' = (1-α) r + α tanh(A r + W_in u)`. Returns the new
    /// state, which also replaces the stored one.
    pub fn drive(&mut self, input: &[f64]) -> Result<&DVector<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, reservoir expects {}",
                input.len(),
                self.input_dim
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "input contains non-finite values".into(),
            ));
        }
        self.step(input);
        Ok(&self.state)
    }

    fn step(&mut self, input: &[f64]) {
        let l = self.size();
        let mut pre = vec![0.0; l];
        for (j, &u) in input.iter().enumerate() {
            if u != 0.0 {
                for (p, w) in pre.iter_mut().zip(self.input_weights.column(j).iter()) {
                    *p += w * u;
                }
            }
        }
        self.internal.mul_add(self.state.as_slice(), &mut pre);
        let alpha = self.config.leak_rate;
        for (r, p) in self.state.iter_mut().zip(pre) {
            *r = (1.0 - alpha) * *r + alpha * p.tanh();
        }
    }

    /// Reset to the zero state and drive with rows `0..N-1` of `series`,
    /// recording each resulting state.
    pub fn collect_states(&mut self, series: &TimeSeriesMatrix) -> Result<States> {
        if series.n_channels() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "series has {} channels, reservoir expects {}",
                series.n_channels(),
                self.input_dim
            )));
        }
        if series.n_rows() < 2 {
            return Err(Error::SeriesTooShort {
                len: series.n_rows(),
                required: 2,
                reason: "collecting states needs an input and a target row".into(),
            });
        }
        self.reset();
        let inputs = series.values().transpose();
        let n = series.n_rows() - 1;
        let mut matrix = DMatrix::zeros(self.size(), n);
        for c in 0..n {
            self.step(inputs.column(c).as_slice());
            matrix.column_mut(c).copy_from(&self.state);
        }
        Ok(States {
            matrix,
            first_index: series.start() + 1,
        })
    }
}

/// Reservoir states stacked as columns; column `c` is `r(first_index + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct States {
    pub matrix: DMatrix<f64>,
    pub first_index: usize,
}

impl States {
    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn last_index(&self) -> usize {
        self.first_index + self.len() - 1
    }
}

/// Trained linear map from reservoir state to a `p`-channel prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub weights: DMatrix<f64>,
}

impl Readout {
    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Closed-form ridge readout `W = Y Rᵀ (R Rᵀ + λI)⁻¹`.
///
/// `targets` must start at `states.first_index`; the first `washout` aligned
/// pairs are skipped. Solved by Cholesky with a pivoted LU fallback.
pub fn train_readout(
    states: &States,
    targets: &TimeSeriesMatrix,
    ridge: f64,
    washout: usize,
) -> Result<Readout> {
    if targets.start() != states.first_index {
        return Err(Error::DimensionMismatch(format!(
            "targets start at index {}, states at {}",
            targets.start(),
            states.first_index
        )));
    }
    let k = targets.n_rows();
    if k > states.len() {
        return Err(Error::DimensionMismatch(format!(
            "{k} targets but only {} states",
            states.len()
        )));
    }
    if washout >= k {
        return Err(Error::SeriesTooShort {
            len: k,
            required: washout + 1,
            reason: format!("washout of {washout} leaves no training pairs"),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let m = k - washout;
    let l = states.matrix.nrows();
    let r = states.matrix.columns(washout, m);
    let y = targets.values().rows(washout, m);
    let mut gram = r * r.transpose();
    for i in 0..l {
        gram[(i, i)] += ridge;
    }
    let rhs = r * y;

    if ridge == 0.0 {
        let eig = gram.symmetric_eigenvalues();
        let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !(min > max * 1e-12) {
            return Err(Error::RankDeficient(format!(
                "{l} states, {m} training pairs, eigenvalue ratio {:.1e}",
                min / max
            )));
        }
    }
    let solution = match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => LU::new(gram).solve(&rhs).ok_or_else(|| {
            Error::RankDeficient(format!("{l} states, {m} training pairs, LU failed"))
        })?,
    };
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("readout weights are not finite".into()));
    }
    Ok(Readout {
        weights: solution.transpose(),
    })
}

/// `q̂_i = W_out r(i)` for every state column.
pub fn reconstruct(readout: &Readout, states: &States, dt: f64) -> Result<TimeSeriesMatrix> {
    if readout.weights.ncols() != states.matrix.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "readout expects {} states, got {}",
            readout.weights.ncols(),
            states.matrix.nrows()
        )));
    }
    let values = states.matrix.tr_mul(&readout.weights.transpose());
    TimeSeriesMatrix::with_start(values, dt, states.first_index)
}

/// Per-channel affine map to zero mean and unit variance. Channels with zero
/// variance keep scale 1 and are flagged so callers can pass them through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(series: &TimeSeriesMatrix) -> Self {
        let (mean, std) = series.channel_stats();
        let mut scale = Vec::with_capacity(mean.len());
        let mut constant = Vec::with_capacity(mean.len());
        for (m, s) in mean.iter().zip(std.iter()) {
            let degenerate = *s <= 1e-12 * (1.0 + m.abs());
            constant.push(degenerate);
            scale.push(if degenerate { 1.0 } else { *s });
        }
        Self {
            mean: mean.iter().copied().collect(),
            scale,
            constant,
        }
    }

    pub fn forward(&self, series: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
        self.check(series)?;
        let mut v = series.values().clone();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                col.apply(|x| *x = (*x - self.mean[j]) / self.scale[j]);
            }
        }
        TimeSeriesMatrix::with_start(v, series.dt(), series.start())
    }

    pub fn inverse(&self, series: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
        self.check(series)?;
        let mut v = series.values().clone();
        for (j, mut col) in v.column_iter_mut().enumerate() {
            col.apply(|x| *x = *x * self.scale[j] + self.mean[j]);
        }
        TimeSeriesMatrix::with_start(v, series.dt(), series.start())
    }

    fn check(&self, series: &TimeSeriesMatrix) -> Result<()> {
        if series.n_channels() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} channels, series has {}",
                self.mean.len(),
                series.n_channels()
            )));
        }
        Ok(())
    }
}
