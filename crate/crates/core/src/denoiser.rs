//! The separation pipeline.
//!
//! 1. Train a one-step echo state predictor on the noisy series itself.
//! 2. Take its reconstruction as the tentative signal and the remainder as
//!    the tentative noise.
//! 3. Diagonalize the residual covariance `C = V diag(σ) Vᵀ`.
//! 4. Weight each noise direction by `w_k = 1 / (1 + σ_k / σ^S_k)`, where
//!    `σ^S_k` is the variance of the tentative signal along `v_k`.
//! 5. Re-run 1–2 on `y = Λ Vᵀ x` with `Λ = diag(w)` and map back with `V Λ⁻¹`.
//!
//! Steps 3–5 run in per-channel standardized coordinates (zero mean, unit
//! variance), the same coordinates the reservoir sees. [`NoiseEstimate`] and
//! [`CalibrationMatrix`] inside a [`DenoiseResult`] are expressed in them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::{reconstruct, train_readout, EsnConfig, ReservoirTopology, Standardizer};
use crate::series::TimeSeriesMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub esn: EsnConfig,
    /// Fraction `K/N` of the series used to train the readout.
    pub train_fraction: f64,
    /// Lower clamp `ε_w` on calibration weights; bounds the gain of `Λ⁻¹`.
    pub weight_floor: f64,
    /// 0 stops after the tentative pass.
    pub calibration_passes: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            esn: EsnConfig::default(),
            train_fraction: 0.8,
            weight_floor: 1e-3,
            calibration_passes: 1,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.esn.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "weight_floor must be in (0, 1], got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }

    /// Time-index layout of a series of `rows` rows starting at `start`.
    pub fn split(&self, start: usize, rows: usize) -> Result<Split> {
        let washout = self.esn.washout;
        let required = (2 * (washout + 1)).max(3);
        if rows < required {
            return Err(Error::SeriesTooShort {
                len: rows,
                required,
                reason: format!("washout of {washout} steps plus a training part"),
            });
        }
        let n = rows - 1;
        let k = (self.train_fraction * n as f64).floor() as usize;
        if k <= washout || k >= n {
            let need = ((washout + 1) as f64 / self.train_fraction).ceil() as usize + 2;
            return Err(Error::SeriesTooShort {
                len: rows,
                required: need.max(required),
                reason: format!(
                    "train_fraction {} gives {k} training steps, need more than the washout of {washout} and fewer than {n}",
                    self.train_fraction
                ),
            });
        }
        Ok(Split {
            first: start,
            washout_end: start + washout,
            train_end: start + k,
            last: start + n,
        })
    }
}

/// Absolute time indices of one series' layout: rows `first..=last`; training
/// targets `first+1..=train_end`, of which `..=washout_end` are skipped;
/// reconstruction covers `washout_end+1..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub first: usize,
    pub washout_end: usize,
    pub train_end: usize,
    pub last: usize,
}

impl Split {
    pub fn reconstructed(&self) -> std::ops::RangeInclusive<usize> {
        self.washout_end + 1..=self.last
    }

    pub fn training(&self) -> std::ops::RangeInclusive<usize> {
        self.washout_end + 1..=self.train_end
    }

    pub fn validation(&self) -> std::ops::RangeInclusive<usize> {
        self.train_end + 1..=self.last
    }
}

/// Train on the training part of `z` and return one-step predictions over
/// the reconstructed range.
pub(crate) fn fit_predict(
    z: &TimeSeriesMatrix,
    topology: &Arc<ReservoirTopology>,
    esn: &EsnConfig,
    split: &Split,
) -> Result<TimeSeriesMatrix> {
    let mut reservoir = topology.build(esn)?;
    let states = reservoir.collect_states(z)?;
    let targets = z.slice(split.first + 1..=split.train_end)?;
    let readout = train_readout(&states, &targets, esn.ridge, esn.washout)?;
    reconstruct(&readout, &states, z.dt())?.slice(split.reconstructed())
}

/// Signal/noise split over the reconstructed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub q_hat: TimeSeriesMatrix,
    pub xi_hat: TimeSeriesMatrix,
    /// Mean of `‖x_i - q̂_i‖²` over the training targets after washout.
    pub training_error: f64,
}

fn separation(
    x: &TimeSeriesMatrix,
    standardizer: &Standardizer,
    z_hat: &TimeSeriesMatrix,
    split: &Split,
) -> Result<Separation> {
    let mut q_hat = standardizer.inverse(z_hat)?.into_values();
    let observed = x.slice(split.reconstructed())?;
    for (j, constant) in standardizer.constant.iter().enumerate() {
        if *constant {
            q_hat.column_mut(j).copy_from(&observed.values().column(j));
        }
    }
    let xi = observed.values() - &q_hat;
    let train_rows = split.train_end - split.washout_end;
    let training_error = xi.rows(0, train_rows).norm_squared() / train_rows as f64;
    Ok(Separation {
        q_hat: TimeSeriesMatrix::with_start(q_hat, x.dt(), split.washout_end + 1)?,
        xi_hat: TimeSeriesMatrix::with_start(xi, x.dt(), split.washout_end + 1)?,
        training_error,
    })
}

struct Prepared {
    standardizer: Standardizer,
    z: TimeSeriesMatrix,
    split: Split,
    topology: Option<Arc<ReservoirTopology>>,
}

fn prepare(x: &TimeSeriesMatrix, cfg: &DenoiseConfig) -> Result<Prepared> {
    cfg.validate()?;
    let split = cfg.split(x.start(), x.n_rows())?;
    let standardizer = Standardizer::fit(x);
    let z = standardizer.forward(x)?;
    // A series with no varying channel is passed through without a reservoir.
    let topology = if standardizer.constant.iter().all(|c| *c) {
        None
    } else {
        Some(ReservoirTopology::generate(&cfg.esn, x.n_channels())?)
    };
    Ok(Prepared {
        standardizer,
        z,
        split,
        topology,
    })
}

fn pass(prep: &Prepared, y: &TimeSeriesMatrix, esn: &EsnConfig) -> Result<TimeSeriesMatrix> {
    match &prep.topology {
        Some(t) => fit_predict(y, t, esn, &prep.split),
        None => TimeSeriesMatrix::with_start(
            DMatrix::zeros(prep.split.last - prep.split.washout_end, y.n_channels()),
            y.dt(),
            prep.split.washout_end + 1,
        ),
    }
}

/// Steps 1–2: one reservoir fit on the series itself.
pub fn tentative_denoise(x: &TimeSeriesMatrix, cfg: &DenoiseConfig) -> Result<Separation> {
    let prep = prepare(x, cfg)?;
    let z_hat = pass(&prep, &prep.z, &cfg.esn)?;
    separation(x, &prep.standardizer, &z_hat, &prep.split)
}

/// Principal directions of the residual covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub residuals: TimeSeriesMatrix,
    /// Subtracted before forming the covariance.
    pub residual_mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Orthogonal; column `k` is the direction of `noise_variances[k]`.
    pub basis: DMatrix<f64>,
    /// Descending, clamped at zero.
    pub noise_variances: DVector<f64>,
}

/// `C = (1/M) Σ ξ̃ ξ̃ᵀ` over mean-centered residual rows, diagonalized with
/// eigenvalues sorted in descending order.
pub fn estimate_noise_pca(residuals: &TimeSeriesMatrix) -> Result<NoiseEstimate> {
    let (m, p) = (residuals.n_rows(), residuals.n_channels());
    if m < p + 1 {
        log::warn!(
            "noise covariance from {m} residual rows for {p} channels is rank deficient; \
             eigenvalues are clamped at zero"
        );
    }
    let (mean, _) = residuals.channel_stats();
    let mut centered = residuals.values().clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let raw = centered.tr_mul(&centered) / m as f64;
    let covariance = (&raw + raw.transpose()) * 0.5;
    let eig = SymmetricEigen::new(covariance.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(p, p);
    let mut variances = DVector::zeros(p);
    for (k, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        // Fix the sign so the largest-magnitude component is positive.
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
        variances[k] = eig.eigenvalues[src].max(0.0);
    }
    Ok(NoiseEstimate {
        residuals: residuals.clone(),
        residual_mean: mean,
        covariance,
        basis,
        noise_variances: variances,
    })
}

/// `σ^S_k = Var[v_kᵀ q̂_i]`, mean-centered with divisor `M`.
pub fn directional_signal_variance(
    q_hat: &TimeSeriesMatrix,
    basis: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let p = q_hat.n_channels();
    if basis.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "basis is {:?}, signal has {p} channels",
            basis.shape()
        )));
    }
    let projected =
        TimeSeriesMatrix::with_start(q_hat.values() * basis, q_hat.dt(), q_hat.start())?;
    let (_, std) = projected.channel_stats();
    Ok(std.map(|s| s * s))
}

/// The diagonal of `Λ` plus the signal variances it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    pub weights: DVector<f64>,
    pub signal_variances: DVector<f64>,
    pub weight_floor: f64,
}

/// `w_k = 1 / (1 + σ_k / σ^S_k)` clamped to `[ε_w, 1]`. With no signal along a
/// direction the weight is `ε_w`, or 1 if that direction carries no noise
/// either.
pub fn calibration_weights(
    noise_variances: &DVector<f64>,
    signal_variances: &DVector<f64>,
    weight_floor: f64,
) -> Result<CalibrationMatrix> {
    if noise_variances.len() != signal_variances.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} noise variances, {} signal variances",
            noise_variances.len(),
            signal_variances.len()
        )));
    }
    if !(weight_floor > 0.0 && weight_floor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "weight floor must be in (0, 1], got {weight_floor}"
        )));
    }
    let valid = |v: &f64| *v >= 0.0 && v.is_finite();
    if !noise_variances.iter().all(valid) || !signal_variances.iter().all(valid) {
        return Err(Error::InvalidArgument(
            "variances must be finite and non-negative".into(),
        ));
    }
    let weights = noise_variances.zip_map(signal_variances, |noise, signal| {
        let w = if signal == 0.0 {
            if noise == 0.0 {
                1.0
            } else {
                weight_floor
            }
        } else {
            1.0 / (1.0 + noise / signal)
        };
        w.clamp(weight_floor, 1.0)
    });
    Ok(CalibrationMatrix {
        weights,
        signal_variances: signal_variances.clone(),
        weight_floor,
    })
}

/// `y_i = Λ Vᵀ x_i`, row-wise.
pub fn to_calibrated(
    x: &TimeSeriesMatrix,
    basis: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<TimeSeriesMatrix> {
    check_transform(x, basis, weights)?;
    let mut y = x.values() * basis;
    for (k, mut col) in y.column_iter_mut().enumerate() {
        col *= weights[k];
    }
    TimeSeriesMatrix::with_start(y, x.dt(), x.start())
}

/// `x_i = V Λ⁻¹ y_i`, row-wise.
pub fn from_calibrated(
    y: &TimeSeriesMatrix,
    basis: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<TimeSeriesMatrix> {
    check_transform(y, basis, weights)?;
    let mut scaled = y.values().clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col /= weights[k];
    }
    TimeSeriesMatrix::with_start(scaled * basis.transpose(), y.dt(), y.start())
}

fn check_transform(
    x: &TimeSeriesMatrix,
    basis: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<()> {
    let p = x.n_channels();
    if basis.shape() != (p, p) || weights.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "series has {p} channels, basis is {:?}, {} weights",
            basis.shape(),
            weights.len()
        )));
    }
    Ok(())
}

/// Step 5 on its own: given a noise estimate and weights (in standardized
/// coordinates of `x`), rerun the reconstruction on `Λ Vᵀ z` and map back.
pub fn calibrated_denoise(
    x: &TimeSeriesMatrix,
    estimate: &NoiseEstimate,
    calibration: &CalibrationMatrix,
    cfg: &DenoiseConfig,
) -> Result<Separation> {
    let prep = prepare(x, cfg)?;
    let z_hat = calibrated_pass(&prep, estimate, calibration, cfg)?;
    separation(x, &prep.standardizer, &z_hat, &prep.split)
}

fn calibrated_pass(
    prep: &Prepared,
    estimate: &NoiseEstimate,
    calibration: &CalibrationMatrix,
    cfg: &DenoiseConfig,
) -> Result<TimeSeriesMatrix> {
    if let Some(w) = calibration
        .weights
        .iter()
        .find(|w| !(**w >= cfg.weight_floor))
    {
        return Err(Error::Internal(format!(
            "calibration weight {w} below the floor {}",
            cfg.weight_floor
        )));
    }
    // Unit weights carry no calibration; the rotation alone would only
    // re-draw the reservoir's view of the same data.
    if calibration.weights.iter().all(|w| *w == 1.0) {
        return pass(prep, &prep.z, &cfg.esn);
    }
    let y = to_calibrated(&prep.z, &estimate.basis, &calibration.weights)?;
    let y_hat = pass(prep, &y, &cfg.esn)?;
    from_calibrated(&y_hat, &estimate.basis, &calibration.weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub q_hat: TimeSeriesMatrix,
    pub xi_hat: TimeSeriesMatrix,
    pub tentative_q_hat: TimeSeriesMatrix,
    /// Of the final pass.
    pub training_error: f64,
    pub tentative_training_error: f64,
    /// From the last calibration pass; `None` when no pass ran.
    pub noise_estimate: Option<NoiseEstimate>,
    pub calibration: Option<CalibrationMatrix>,
    pub calibration_passes: usize,
    pub standardizer: Standardizer,
    pub split: Split,
}

/// The full pipeline: tentative pass, then `calibration_passes` rounds of
/// residual PCA, weighting and calibrated reconstruction, each round
/// re-estimating the noise from the previous round's residual.
pub fn mssrc(x: &TimeSeriesMatrix, cfg: &DenoiseConfig) -> Result<DenoiseResult> {
    let prep = prepare(x, cfg)?;
    let mut z_hat = pass(&prep, &prep.z, &cfg.esn)?;
    let tentative = separation(x, &prep.standardizer, &z_hat, &prep.split)?;

    let mut noise_estimate = None;
    let mut calibration = None;
    let observed = prep.z.slice(prep.split.reconstructed())?;
    for round in 0..cfg.calibration_passes {
        let residual = TimeSeriesMatrix::with_start(
            observed.values() - z_hat.values(),
            x.dt(),
            observed.start(),
        )?;
        let est = estimate_noise_pca(&residual)?;
        let signal = directional_signal_variance(&z_hat, &est.basis)?;
        let cal = calibration_weights(&est.noise_variances, &signal, cfg.weight_floor)?;
        log::debug!(
            "calibration round {}: weights {:?}",
            round + 1,
            cal.weights.as_slice()
        );
        z_hat = calibrated_pass(&prep, &est, &cal, cfg)?;
        noise_estimate = Some(est);
        calibration = Some(cal);
    }
    let last = if cfg.calibration_passes == 0 {
        tentative.clone()
    } else {
        separation(x, &prep.standardizer, &z_hat, &prep.split)?
    };
    Ok(DenoiseResult {
        q_hat: last.q_hat,
        xi_hat: last.xi_hat,
        tentative_q_hat: tentative.q_hat,
        training_error: last.training_error,
        tentative_training_error: tentative.training_error,
        noise_estimate,
        calibration,
        calibration_passes: cfg.calibration_passes,
        standardizer: prep.standardizer,
        split: prep.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::snr_db;
    use crate::signals::{add_correlated_noise, NoiseParams};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn small_cfg() -> DenoiseConfig {
        DenoiseConfig {
            esn: EsnConfig {
                reservoir_size: 60,
                washout: 20,
                ridge: 1e-4,
                ..EsnConfig::default()
            },
            ..DenoiseConfig::default()
        }
    }

    fn series(f: impl Fn(usize, usize) -> f64, n: usize, p: usize) -> TimeSeriesMatrix {
        TimeSeriesMatrix::new(DMatrix::from_fn(n, p, f), 1.0).unwrap()
    }

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    fn slow_sine(n: usize, p: usize) -> TimeSeriesMatrix {
        series(|i, j| (2.0 * PI * i as f64 / 100.0 + j as f64).sin(), n, p)
    }

    #[test]
    fn split_layout_and_minimum_length() {
        let cfg = DenoiseConfig::default();
        let s = cfg.split(0, 10001).unwrap();
        assert_eq!((s.washout_end, s.train_end, s.last), (100, 8000, 10000));
        assert_eq!(s.reconstructed(), 101..=10000);
        assert_eq!(s.validation(), 8001..=10000);
        assert!(matches!(
            cfg.split(0, 201),
            Err(Error::SeriesTooShort { required: 202, .. })
        ));
        // Long enough overall, but 0.8 of it does not clear the washout.
        assert!(matches!(
            cfg.split(0, 110),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn constant_channels_pass_through() {
        let x = series(|_, j| [3.0, -1.5][j], 200, 2);
        let r = mssrc(&x, &small_cfg()).unwrap();
        assert!(r
            .q_hat
            .values()
            .iter()
            .zip(x.slice(r.split.reconstructed()).unwrap().values().iter())
            .all(|(a, b)| a == b));
        assert_eq!(r.training_error, 0.0);

        // A constant channel next to a varying one is copied verbatim.
        let mixed = series(
            |i, j| if j == 0 { 2.5 } else { (i as f64 * 0.1).sin() },
            300,
            2,
        );
        let r = tentative_denoise(&mixed, &small_cfg()).unwrap();
        assert!(r.q_hat.values().column(0).iter().all(|v| *v == 2.5));
    }

    #[test]
    fn clean_slow_sinusoid_is_reproduced() {
        let x = slow_sine(5001, 3);
        let cfg = DenoiseConfig {
            calibration_passes: 0,
            ..DenoiseConfig::default()
        };
        let r = mssrc(&x, &cfg).unwrap();
        let report = snr_db(&x, &r.q_hat, r.split.reconstructed()).unwrap();
        for db in report.per_channel_db {
            assert!(db.unwrap() > 30.0, "{db:?}");
        }
    }

    #[test]
    fn residual_variance_tracks_injected_noise() {
        let clean = slow_sine(5001, 3);
        let noise = add_correlated_noise(
            &clean,
            &NoiseParams {
                correlation: 0.0,
                target_input_snr_db: 0.0,
                seed: 4,
            },
        )
        .unwrap();
        let r = tentative_denoise(&noise.noisy, &DenoiseConfig::default()).unwrap();
        let (_, resid_std) = r.xi_hat.channel_stats();
        let (_, true_std) = noise
            .noise
            .slice(r.xi_hat.index_range())
            .unwrap()
            .channel_stats();
        for j in 0..3 {
            let ratio = (resid_std[j] / true_std[j]).powi(2);
            assert!((0.5..=2.0).contains(&ratio), "channel {j}: ratio {ratio}");
        }
    }

    #[test]
    fn pca_of_hand_residuals() {
        let r = TimeSeriesMatrix::from_rows(
            &[
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
            ],
            1.0,
        )
        .unwrap();
        let est = estimate_noise_pca(&r).unwrap();
        assert_eq!(
            est.covariance,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );
        assert_eq!(est.noise_variances.as_slice(), &[1.0, 0.0]);
        assert!((est.basis[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(est.basis[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn pca_of_white_noise_is_isotropic() {
        let r = TimeSeriesMatrix::new(gaussian(100_000, 5, 11), 1.0).unwrap();
        let est = estimate_noise_pca(&r).unwrap();
        for s in est.noise_variances.iter() {
            assert!((0.97..=1.03).contains(s), "{s}");
        }
        let gram = est.basis.tr_mul(&est.basis);
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-8);
        let rebuilt =
            &est.basis * DMatrix::from_diagonal(&est.noise_variances) * est.basis.transpose();
        assert!((rebuilt - &est.covariance).norm() <= 1e-8 * est.covariance.norm());
    }

    #[test]
    fn pca_recovers_a_planted_rotation() {
        let spread = [3.0, 2.0, 1.2, 0.6, 0.25];
        let q = gaussian(5, 5, 99).qr().q();
        let axis =
            gaussian(100_000, 5, 12) * DMatrix::from_diagonal(&DVector::from_row_slice(&spread));
        let r = TimeSeriesMatrix::new(axis * q.transpose(), 1.0).unwrap();
        let est = estimate_noise_pca(&r).unwrap();
        for (k, s) in spread.iter().enumerate() {
            let cos = est.basis.column(k).dot(&q.column(k)).abs();
            assert!(cos > 0.99, "column {k}: cosine {cos}");
            let planted = s * s;
            assert!((est.noise_variances[k] / planted - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn signal_variance_examples() {
        let constant = series(|_, _| 4.0, 50, 2);
        let sv = directional_signal_variance(&constant, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(sv.as_slice(), &[0.0, 0.0]);

        // Channels ±2 and ±1 alternating: population variances 4 and 1.
        let alt = series(
            |i, j| {
                if i % 2 == 0 {
                    [2.0, 1.0][j]
                } else {
                    -[2.0, 1.0][j]
                }
            },
            10,
            2,
        );
        let sv = directional_signal_variance(&alt, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(sv.as_slice(), &[4.0, 1.0]);

        let twin = series(|i, _| if i % 2 == 0 { 1.0 } else { -1.0 }, 10, 2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let basis = DMatrix::from_row_slice(2, 2, &[h, -h, h, h]);
        let sv = directional_signal_variance(&twin, &basis).unwrap();
        assert!((sv[0] - 2.0).abs() < 1e-12);
        assert!(sv[1].abs() < 1e-12);
    }

    #[test]
    fn weight_examples() {
        let w = |noise: f64, signal: f64, floor: f64| {
            calibration_weights(
                &DVector::from_element(1, noise),
                &DVector::from_element(1, signal),
                floor,
            )
            .unwrap()
            .weights[0]
        };
        assert_eq!(w(0.0, 1.0, 1e-3), 1.0);
        assert_eq!(w(2.5, 2.5, 1e-3), 0.5);
        assert_eq!(w(3.0, 1.0, 0.05), 0.25);
        assert_eq!(w(1e6, 1.0, 0.05), 0.05);
        assert_eq!(w(1.0, 0.0, 0.05), 0.05);
        assert_eq!(w(0.0, 0.0, 0.05), 1.0);
        let neg = calibration_weights(
            &DVector::from_element(1, -1.0),
            &DVector::from_element(1, 1.0),
            0.1,
        );
        assert!(matches!(neg, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_calibration_equals_tentative() {
        let x = series(
            |i, j| (i as f64 * 0.07 * (j + 1) as f64).sin() + 0.3 * ((i * 13 + j) as f64).cos(),
            400,
            3,
        );
        let cfg = small_cfg();
        let tentative = tentative_denoise(&x, &cfg).unwrap();
        let est = NoiseEstimate {
            residuals: tentative.xi_hat.clone(),
            residual_mean: DVector::zeros(3),
            covariance: DMatrix::identity(3, 3),
            basis: DMatrix::identity(3, 3),
            noise_variances: DVector::from_element(3, 1.0),
        };
        let cal = CalibrationMatrix {
            weights: DVector::from_element(3, 1.0),
            signal_variances: DVector::from_element(3, 1.0),
            weight_floor: cfg.weight_floor,
        };
        let calibrated = calibrated_denoise(&x, &est, &cal, &cfg).unwrap();
        assert_eq!(calibrated, tentative);
        // The transform itself is exact for the identity pair.
        let z = Standardizer::fit(&x).forward(&x).unwrap();
        assert_eq!(to_calibrated(&z, &est.basis, &cal.weights).unwrap(), z);
    }

    #[test]
    fn weights_below_the_floor_are_internal_errors() {
        let x = slow_sine(300, 2);
        let cfg = small_cfg();
        let tentative = tentative_denoise(&x, &cfg).unwrap();
        let est = estimate_noise_pca(&tentative.xi_hat).unwrap();
        let cal = CalibrationMatrix {
            weights: DVector::from_element(2, cfg.weight_floor / 2.0),
            signal_variances: DVector::from_element(2, 1.0),
            weight_floor: cfg.weight_floor,
        };
        assert!(matches!(
            calibrated_denoise(&x, &est, &cal, &cfg),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn zero_passes_is_the_tentative_result() {
        let x = series(
            |i, j| (i as f64 * 0.05).sin() * (j + 1) as f64 + 0.1 * ((i * 7) as f64).sin(),
            300,
            2,
        );
        let cfg = DenoiseConfig {
            calibration_passes: 0,
            ..small_cfg()
        };
        let r = mssrc(&x, &cfg).unwrap();
        let t = tentative_denoise(&x, &cfg).unwrap();
        assert_eq!(r.q_hat, t.q_hat);
        assert_eq!(r.xi_hat, t.xi_hat);
        assert_eq!(r.training_error, t.training_error);
        assert!(r.calibration.is_none() && r.noise_estimate.is_none());
    }

    #[test]
    fn white_noise_input_completes_with_degenerate_snr() {
        let x = TimeSeriesMatrix::new(gaussian(600, 4, 5), 1.0).unwrap();
        let r = mssrc(&x, &small_cfg()).unwrap();
        let zero = series(|_, _| 0.0, 600, 4);
        let report = snr_db(&zero, &r.q_hat, r.split.reconstructed()).unwrap();
        assert!(report.is_degenerate());
        assert_eq!(report.undefined_channels.len(), 4);
    }

    #[test]
    fn repeated_passes_reestimate_the_noise() {
        let x = series(
            |i, j| (i as f64 * 0.05 + j as f64).sin() + 0.5 * ((i * 31 + j * 7) as f64).sin(),
            400,
            3,
        );
        let one = mssrc(&x, &small_cfg()).unwrap();
        let two = mssrc(
            &x,
            &DenoiseConfig {
                calibration_passes: 2,
                ..small_cfg()
            },
        )
        .unwrap();
        assert_eq!(two.calibration_passes, 2);
        assert_ne!(one.calibration, two.calibration);
        let w = &two.calibration.unwrap().weights;
        assert!(w.iter().all(|w| (1e-3..=1.0).contains(w)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn decomposition_identity_and_determinism(
            seed in 0u64..500,
            p in 1usize..4,
            passes in 0usize..3,
            amp in 0.1f64..10.0,
        ) {
            let noise = gaussian(300, p, seed);
            let x = series(|i, j| amp * (i as f64 * 0.03 * (j + 1) as f64).sin() + noise[(i, j)], 300, p);
            let cfg = DenoiseConfig {
                calibration_passes: passes,
                esn: EsnConfig { seed, ..small_cfg().esn },
                ..small_cfg()
            };
            let r = mssrc(&x, &cfg).unwrap();
            let observed = x.slice(r.split.reconstructed()).unwrap();
            let sum = r.q_hat.values() + r.xi_hat.values();
            for (a, b) in sum.iter().zip(observed.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
            prop_assert_eq!(mssrc(&x, &cfg).unwrap(), r);
        }

        #[test]
        fn weights_are_antitone_in_noise_and_monotone_in_signal(
            n1 in 0.0f64..10.0, n2 in 0.0f64..10.0,
            s1 in 0.0f64..10.0, s2 in 0.0f64..10.0,
            floor in 1e-4f64..0.5,
        ) {
            let w = |n: f64, s: f64| calibration_weights(&DVector::from_element(1, n), &DVector::from_element(1, s), floor).unwrap().weights[0];
            let (nl, nh) = if n1 <= n2 { (n1, n2) } else { (n2, n1) };
            let (sl, sh) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(w(nl, s1) >= w(nh, s1));
            prop_assert!(w(n1, sh) >= w(n1, sl));
            prop_assert!((floor..=1.0).contains(&w(n1, s1)));
        }

        #[test]
        fn basis_round_trip(seed in 0u64..1000, p in 1usize..6, floor in 1e-3f64..1.0) {
            let v = gaussian(p, p, seed).qr().q();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let w = DVector::from_fn(p, |_, _| floor + (1.0 - floor) * rand::Rng::random::<f64>(&mut rng));
            let x = TimeSeriesMatrix::new(gaussian(40, p, seed + 2) * 5.0, 1.0).unwrap();
            let back = from_calibrated(&to_calibrated(&x, &v, &w).unwrap(), &v, &w).unwrap();
            prop_assert!((back.values() - x.values()).norm() <= 1e-10 * x.values().norm());
        }
    }
}
