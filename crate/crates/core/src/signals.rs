//! Test-signal generators and spatially correlated noise injection.
//!
//! Two clean families: the Kuramoto–Sivashinsky equation
//! `u_t = -u u_x - u_xx - u_xxxx` on a periodic domain, integrated with the
//! ETDRK4 scheme in Fourier space and sampled at equally spaced grid points;
//! and independent per-channel sinusoids. Noise is Gaussian with covariance
//! `ρ^|i-j|` across channels, rescaled so the realized average per-channel SNR
//! hits a target exactly.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::snr_db;
use crate::series::TimeSeriesMatrix;

/// Initial condition of the KS integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsInitial {
    /// `cos(2πx/Lx)·(1 + 0.1·η(x))` with `η` a seeded sum of low modes.
    PerturbedCosine,
    /// `u ≡ 0`, a fixed point of the equation.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsParams {
    pub domain_length: f64,
    /// Number of Fourier modes / grid points; a power of two.
    pub grid_points: usize,
    pub dt: f64,
    /// Recorded steps, one output row each.
    pub n_steps: usize,
    pub transient_steps: usize,
    /// Output channels, taken at equally spaced grid indices.
    pub sample_channels: usize,
    pub seed: u64,
    pub initial: KsInitial,
}

impl Default for KsParams {
    fn default() -> Self {
        Self {
            domain_length: 60.0,
            grid_points: 128,
            dt: 0.25,
            n_steps: 10_000,
            transient_steps: 2000,
            sample_channels: 50,
            seed: 0,
            initial: KsInitial::PerturbedCosine,
        }
    }
}

impl KsParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return bad(format!(
                "domain_length must be positive, got {}",
                self.domain_length
            ));
        }
        if self.grid_points < 4 || !self.grid_points.is_power_of_two() {
            return bad(format!(
                "grid_points must be a power of two >= 4, got {}",
                self.grid_points
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n_steps == 0 {
            return bad("n_steps must be positive".into());
        }
        if self.sample_channels == 0 || self.sample_channels > self.grid_points {
            return bad(format!(
                "sample_channels must be in 1..={}, got {}",
                self.grid_points, self.sample_channels
            ));
        }
        Ok(())
    }

    /// Grid indices of the output channels.
    pub fn sample_indices(&self) -> Vec<usize> {
        (0..self.sample_channels)
            .map(|j| j * self.grid_points / self.sample_channels)
            .collect()
    }
}

/// Precomputed ETDRK4 operators for one (domain, grid, dt).
struct Etdrk4 {
    n: usize,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    g: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Etdrk4 {
    const CONTOUR_POINTS: usize = 32;

    fn new(domain_length: f64, n: usize, h: f64) -> Self {
        let wavenumber = |j: usize| -> f64 {
            if j < n / 2 {
                j as f64
            } else if j == n / 2 {
                0.0
            } else {
                j as f64 - n as f64
            }
        };
        let mut e = Vec::with_capacity(n);
        let mut e2 = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut f1 = Vec::with_capacity(n);
        let mut f2 = Vec::with_capacity(n);
        let mut f3 = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        let m = Self::CONTOUR_POINTS;
        let roots: Vec<Complex64> = (1..=m)
            .map(|k| Complex64::from_polar(1.0, PI * (k as f64 - 0.5) / m as f64 * 2.0))
            .collect();
        for j in 0..n {
            let kq = 2.0 * PI * wavenumber(j) / domain_length;
            let lin = kq * kq - kq.powi(4);
            e.push((h * lin).exp());
            e2.push((h * lin / 2.0).exp());
            g.push(Complex64::new(0.0, -0.5 * kq));
            // Contour means avoid cancellation in the phi-functions near hL = 0.
            let (mut sq, mut s1, mut s2, mut s3) = (
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
            );
            for r in &roots {
                let lr = h * lin + r;
                let elr = lr.exp();
                let lr3 = lr * lr * lr;
                sq += ((lr / 2.0).exp() - 1.0) / lr;
                s1 += (-4.0 - lr + elr * (4.0 - 3.0 * lr + lr * lr)) / lr3;
                s2 += (2.0 + lr + elr * (lr - 2.0)) / lr3;
                s3 += (-4.0 - 3.0 * lr - lr * lr + elr * (4.0 - lr)) / lr3;
            }
            let mf = m as f64;
            q.push(h * sq.re / mf);
            f1.push(h * s1.re / mf);
            f2.push(h * s2.re / mf);
            f3.push(h * s3.re / mf);
        }
        let mut planner = FftPlanner::new();
        Self {
            n,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            g,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        }
    }

    fn to_physical(&self, v: &[Complex64]) -> Vec<f64> {
        let mut buf = v.to_vec();
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    /// `-(u²/2)_x` in Fourier space.
    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let u = self.to_physical(v);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        let mut w = self.to_spectral(&sq);
        for (w, g) in w.iter_mut().zip(&self.g) {
            *w *= g;
        }
        w
    }

    fn step(&self, v: &mut [Complex64]) {
        let n = self.n;
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..n)
            .map(|j| self.e2[j] * v[j] + self.q[j] * nv[j])
            .collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..n)
            .map(|j| self.e2[j] * v[j] + self.q[j] * na[j])
            .collect();
        let nb = self.nonlinear(&b);
        let c: Vec<Complex64> = (0..n)
            .map(|j| self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]))
            .collect();
        let nc = self.nonlinear(&c);
        for j in 0..n {
            v[j] = self.e[j] * v[j]
                + nv[j] * self.f1[j]
                + 2.0 * (na[j] + nb[j]) * self.f2[j]
                + nc[j] * self.f3[j];
        }
    }
}

/// Integrate KS and return `n_steps` rows of `sample_channels` point samples.
pub fn generate_ks(params: &KsParams) -> Result<TimeSeriesMatrix> {
    params.validate()?;
    let n = params.grid_points;
    let lx = params.domain_length;
    let solver = Etdrk4::new(lx, n, params.dt);

    let u0: Vec<f64> = match params.initial {
        KsInitial::Zero => vec![0.0; n],
        KsInitial::PerturbedCosine => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let modes: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            (0..n)
                .map(|j| {
                    let x = lx * j as f64 / n as f64;
                    let eta: f64 = modes
                        .iter()
                        .enumerate()
                        .map(|(m, (a, ph))| a * (2.0 * PI * (m + 1) as f64 * x / lx + ph).sin())
                        .sum();
                    (2.0 * PI * x / lx).cos() * (1.0 + 0.1 * eta)
                })
                .collect()
        }
    };
    let mut v = solver.to_spectral(&u0);
    let idx = params.sample_indices();
    let mut out = DMatrix::zeros(params.n_steps, idx.len());
    let total = params.transient_steps + params.n_steps;
    for step in 0..total {
        solver.step(&mut v);
        let u = solver.to_physical(&v);
        // Round-off leaves a non-Hermitian part that the unstable linear modes
        // amplify; project back onto real fields every step.
        v = solver.to_spectral(&u);
        if u.iter().any(|x| !x.is_finite() || x.abs() > 1e6) {
            return Err(Error::IntegrationDiverged {
                step: step + 1,
                dt: params.dt,
            });
        }
        if step >= params.transient_steps {
            let row = step - params.transient_steps;
            for (c, &i) in idx.iter().enumerate() {
                out[(row, c)] = u[i];
            }
        }
    }
    TimeSeriesMatrix::new(out, params.dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidParams {
    pub channels: usize,
    /// Cycles per unit time; defaults spread `f·dt` evenly over `[0.05, 0.45]`.
    pub frequencies: Option<Vec<f64>>,
    /// Defaults to 1 for every channel.
    pub amplitudes: Option<Vec<f64>>,
    /// Radians; defaults to 0.
    pub phases: Option<Vec<f64>>,
    pub dt: f64,
    pub n_samples: usize,
}

impl Default for SinusoidParams {
    fn default() -> Self {
        Self {
            channels: 10,
            frequencies: None,
            amplitudes: None,
            phases: None,
            dt: 1.0,
            n_samples: 10_000,
        }
    }
}

impl SinusoidParams {
    /// Copy with every optional per-channel vector filled in.
    pub fn resolved(&self) -> Self {
        let p = self.channels;
        let freqs = self.frequencies.clone().unwrap_or_else(|| {
            (0..p)
                .map(|k| {
                    let frac = if p > 1 {
                        k as f64 / (p - 1) as f64
                    } else {
                        0.0
                    };
                    (0.05 + 0.4 * frac) / self.dt
                })
                .collect()
        });
        Self {
            channels: p,
            frequencies: Some(freqs),
            amplitudes: Some(self.amplitudes.clone().unwrap_or_else(|| vec![1.0; p])),
            phases: Some(self.phases.clone().unwrap_or_else(|| vec![0.0; p])),
            dt: self.dt,
            n_samples: self.n_samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if r.channels == 0 || r.n_samples == 0 {
            return bad("sinusoid needs at least one channel and one sample".into());
        }
        if !(r.dt > 0.0 && r.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", r.dt));
        }
        let (f, a, ph) = (
            r.frequencies.as_ref().unwrap(),
            r.amplitudes.as_ref().unwrap(),
            r.phases.as_ref().unwrap(),
        );
        if f.len() != r.channels || a.len() != r.channels || ph.len() != r.channels {
            return bad(format!(
                "expected {} frequencies, amplitudes and phases, got {}, {} and {}",
                r.channels,
                f.len(),
                a.len(),
                ph.len()
            ));
        }
        for (k, fk) in f.iter().enumerate() {
            if !(fk.abs() * r.dt < 0.5) {
                return bad(format!(
                    "channel {}: f*dt = {} violates the Nyquist limit 0.5",
                    k + 1,
                    fk * r.dt
                ));
            }
        }
        if let Some(k) = a.iter().position(|ak| !(*ak > 0.0 && ak.is_finite())) {
            return bad(format!("channel {}: amplitude must be positive", k + 1));
        }
        if ph.iter().any(|x| !x.is_finite()) {
            return bad("phases must be finite".into());
        }
        Ok(())
    }
}

/// `x[i][k] = a_k sin(2π f_k i dt + φ_k)`.
pub fn generate_sinusoid(params: &SinusoidParams) -> Result<TimeSeriesMatrix> {
    params.validate()?;
    let r = params.resolved();
    let (f, a, ph) = (
        r.frequencies.unwrap(),
        r.amplitudes.unwrap(),
        r.phases.unwrap(),
    );
    let values = DMatrix::from_fn(r.n_samples, r.channels, |i, k| {
        a[k] * (2.0 * PI * f[k] * i as f64 * r.dt + ph[k]).sin()
    });
    TimeSeriesMatrix::new(values, r.dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Correlation between adjacent channels; channel `i`, `j` covary as `ρ^|i-j|`.
    pub correlation: f64,
    pub target_input_snr_db: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            correlation: 0.5,
            target_input_snr_db: 0.0,
            seed: 0,
        }
    }
}

/// Channel covariance `Σ[i, j] = ρ^|i-j|`.
pub fn correlation_matrix(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

/// Noisy observation plus the noise that was added.
#[derive(Debug, Clone)]
pub struct NoisySignal {
    pub noisy: TimeSeriesMatrix,
    pub noise: TimeSeriesMatrix,
    pub realized_input_snr_db: f64,
    /// Factor applied to the unit-covariance draw.
    pub noise_scale: f64,
}

/// Add `σ·chol(Σ)·z` noise, `z` iid standard normal, with `σ` chosen from the
/// drawn sample so the average per-channel SNR equals the target.
pub fn add_correlated_noise(clean: &TimeSeriesMatrix, params: &NoiseParams) -> Result<NoisySignal> {
    let rho = params.correlation;
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "noise correlation must be in [0, 1), got {rho}"
        )));
    }
    if !params.target_input_snr_db.is_finite() {
        return Err(Error::InvalidArgument("target SNR must be finite".into()));
    }
    let (n, p) = (clean.n_rows(), clean.n_channels());
    let signal_power: Vec<f64> = clean
        .values()
        .column_iter()
        .map(|c| c.norm_squared())
        .collect();
    if signal_power.iter().all(|&s| s == 0.0) {
        return Err(Error::CannotTargetSnr("clean signal has zero power".into()));
    }
    let chol = Cholesky::new(correlation_matrix(p, rho))
        .ok_or_else(|| Error::Numerical("noise covariance is not positive definite".into()))?;
    let lower = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut raw = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        raw.row_mut(i).copy_from(&(&lower * &z).transpose());
    }

    // Scaling every channel by σ moves every channel's SNR, and so the
    // average, by -20 log10 σ.
    let mut total = 0.0;
    let mut counted = 0usize;
    for (j, &ps) in signal_power.iter().enumerate() {
        if ps > 0.0 {
            total += 10.0 * (ps / raw.column(j).norm_squared()).log10();
            counted += 1;
        }
    }
    let raw_snr = total / counted as f64;
    let scale = 10f64.powf((raw_snr - params.target_input_snr_db) / 20.0);
    let noisy_values = clean.values() + &raw * scale;
    let noisy = TimeSeriesMatrix::with_start(noisy_values, clean.dt(), clean.start())?;
    let noise =
        TimeSeriesMatrix::with_start(noisy.values() - clean.values(), clean.dt(), clean.start())?;
    let realized = snr_db(clean, &noisy, clean.index_range())?
        .average_db
        .ok_or_else(|| Error::CannotTargetSnr("no channel with signal power".into()))?;
    Ok(NoisySignal {
        noisy,
        noise,
        realized_input_snr_db: realized,
        noise_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_corr(m: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let n = m.nrows() as f64;
        let (ca, cb) = (m.column(a), m.column(b));
        let (ma, mb) = (ca.sum() / n, cb.sum() / n);
        let cov: f64 = ca
            .iter()
            .zip(cb.iter())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum();
        let va: f64 = ca.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = cb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ks_zero_initial_condition_stays_zero() {
        let p = KsParams {
            initial: KsInitial::Zero,
            n_steps: 200,
            transient_steps: 10,
            ..KsParams::default()
        };
        let s = generate_ks(&p).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
        assert_eq!(s.n_channels(), 50);
    }

    #[test]
    fn ks_is_deterministic_and_seed_sensitive() {
        let p = KsParams {
            n_steps: 300,
            transient_steps: 100,
            sample_channels: 8,
            ..KsParams::default()
        };
        let a = generate_ks(&p).unwrap();
        let b = generate_ks(&p).unwrap();
        assert_eq!(a, b);
        let c = generate_ks(&KsParams { seed: 9, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ks_default_amplitude_band() {
        let s = generate_ks(&KsParams::default()).unwrap();
        assert_eq!(s.n_rows(), 10_000);
        let (_, std) = s.channel_stats();
        for (j, sd) in std.iter().enumerate() {
            assert!((0.5..=3.0).contains(sd), "channel {j} std {sd}");
        }
    }

    #[test]
    fn ks_linear_modes_decay_exactly_in_linear_regime() {
        // A tiny single-mode perturbation evolves linearly: u ≈ ε e^{(k²-k⁴)t} cos(kx).
        let solver = Etdrk4::new(2.0 * PI, 16, 0.01);
        let eps = 1e-8;
        let u0: Vec<f64> = (0..16)
            .map(|j| eps * (2.0 * PI * 2.0 * j as f64 / 16.0).cos())
            .collect();
        let mut v = solver.to_spectral(&u0);
        for _ in 0..100 {
            solver.step(&mut v);
        }
        let u = solver.to_physical(&v);
        let expected = eps * ((4.0f64 - 16.0) * 1.0).exp();
        assert_relative_eq!(u[0], expected, max_relative = 1e-6);
    }

    #[test]
    fn ks_rejects_bad_params() {
        let p = KsParams {
            grid_points: 100,
            ..KsParams::default()
        };
        assert!(generate_ks(&p).is_err());
        let p = KsParams {
            sample_channels: 200,
            ..KsParams::default()
        };
        assert!(generate_ks(&p).is_err());
    }

    #[test]
    fn ks_divergence_is_reported() {
        // Far too large a step on a fine grid blows up the explicit nonlinear part.
        let p = KsParams {
            dt: 50.0,
            grid_points: 256,
            domain_length: 200.0,
            transient_steps: 0,
            n_steps: 400,
            sample_channels: 4,
            ..KsParams::default()
        };
        match generate_ks(&p) {
            Err(Error::IntegrationDiverged { dt, .. }) => assert_eq!(dt, 50.0),
            other => panic!("expected divergence, got {:?}", other.map(|s| s.n_rows())),
        }
    }

    #[test]
    fn sinusoid_quarter_period() {
        let p = SinusoidParams {
            channels: 1,
            frequencies: Some(vec![0.25]),
            n_samples: 8,
            ..SinusoidParams::default()
        };
        let s = generate_sinusoid(&p).unwrap();
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        for (v, e) in s.values().column(0).iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_phase_shift_gives_cosine() {
        let p = SinusoidParams {
            channels: 1,
            frequencies: Some(vec![0.1]),
            amplitudes: Some(vec![2.5]),
            phases: Some(vec![PI / 2.0]),
            n_samples: 50,
            ..SinusoidParams::default()
        };
        let s = generate_sinusoid(&p).unwrap();
        assert_eq!(s.values()[(0, 0)], 2.5);
        for i in 0..50 {
            let c = 2.5 * (2.0 * PI * 0.1 * i as f64).cos();
            assert!((s.values()[(i, 0)] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_defaults_have_half_power() {
        let s = generate_sinusoid(&SinusoidParams::default()).unwrap();
        assert_eq!(s.n_channels(), 10);
        let f = SinusoidParams::default().resolved().frequencies.unwrap();
        assert_relative_eq!(f[0], 0.05, max_relative = 1e-12);
        assert_relative_eq!(f[9], 0.45, max_relative = 1e-12);
        let (_, std) = s.channel_stats();
        for sd in std.iter() {
            assert!((sd * sd - 0.5).abs() <= 0.02 * 0.5, "variance {}", sd * sd);
        }
    }

    #[test]
    fn sinusoid_nyquist_is_enforced() {
        let p = SinusoidParams {
            channels: 1,
            frequencies: Some(vec![0.5]),
            ..SinusoidParams::default()
        };
        assert!(matches!(
            generate_sinusoid(&p),
            Err(Error::InvalidArgument(_))
        ));
        let p = SinusoidParams {
            channels: 2,
            frequencies: Some(vec![0.1]),
            ..SinusoidParams::default()
        };
        assert!(generate_sinusoid(&p).is_err());
    }

    fn clean(n: usize, p: usize) -> TimeSeriesMatrix {
        generate_sinusoid(&SinusoidParams {
            channels: p,
            n_samples: n,
            ..SinusoidParams::default()
        })
        .unwrap()
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let c = clean(100_000, 3);
        let out = add_correlated_noise(
            &c,
            &NoiseParams {
                correlation: 0.0,
                ..NoiseParams::default()
            },
        )
        .unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            assert!(sample_corr(out.noise.values(), a, b).abs() < 0.02);
        }
    }

    #[test]
    fn ar1_correlation_structure() {
        let c = clean(100_000, 3);
        let out = add_correlated_noise(&c, &NoiseParams::default()).unwrap();
        let r01 = sample_corr(out.noise.values(), 0, 1);
        let r12 = sample_corr(out.noise.values(), 1, 2);
        let r02 = sample_corr(out.noise.values(), 0, 2);
        assert!((0.47..=0.53).contains(&r01), "{r01}");
        assert!((0.47..=0.53).contains(&r12), "{r12}");
        assert!((0.22..=0.28).contains(&r02), "{r02}");

        let n = 100_000.0;
        let cov = out.noise.values().tr_mul(out.noise.values()) / n;
        let planted = correlation_matrix(3, 0.5) * out.noise_scale.powi(2);
        assert!((&cov - &planted).norm() / planted.norm() < 0.05);
    }

    #[test]
    fn snr_is_hit_exactly() {
        let c = clean(3000, 4);
        for target in [-10.0, -5.0, 0.0, 5.0, 10.0] {
            let out = add_correlated_noise(
                &c,
                &NoiseParams {
                    target_input_snr_db: target,
                    seed: 3,
                    ..NoiseParams::default()
                },
            )
            .unwrap();
            assert!((out.realized_input_snr_db - target).abs() <= 0.05);
            let recomputed = snr_db(&c, &out.noisy, c.index_range()).unwrap();
            assert!((recomputed.average_db.unwrap() - target).abs() <= 0.05);
            let diff = out.noisy.values() - out.noise.values() - c.values();
            assert!(diff.amax() <= 1e-12 * out.noisy.values().amax());
        }
    }

    #[test]
    fn zero_signal_cannot_be_targeted() {
        let z = TimeSeriesMatrix::new(DMatrix::zeros(10, 2), 1.0).unwrap();
        assert!(matches!(
            add_correlated_noise(&z, &NoiseParams::default()),
            Err(Error::CannotTargetSnr(_))
        ));
        let c = clean(10, 2);
        let bad = NoiseParams {
            correlation: 1.0,
            ..NoiseParams::default()
        };
        assert!(add_correlated_noise(&c, &bad).is_err());
    }
}
