//! Data-averaged (frequentist) moments of the filter estimates.
//!
//! Averaging the filter over observation paths drawn from a fixed truth
//! gives three coupled blocks per mode, all driven by the gains of the
//! posterior covariance:
//!
//! - the bias block `(mu, m_u, m_f)`: the signal mean and the means of the
//!   two estimates,
//! - the estimator covariance block `(p_u, p_uf, p_f)`, where `p_u` is the
//!   variance of the centered state estimate and `p_f` the variance of the
//!   drift estimate,
//! - the posterior covariance itself (from [`crate::filter_core`]).
//!
//! The difference `delta p = p - sigma` has an equilibrium at exactly
//! zero, with a Lyapunov function certifying decay toward it; both are
//! exposed here as diagnostics. All nine components are integrated
//! jointly on one grid so the gains feeding the bias and covariance
//! blocks stay synchronized with the Riccati flow at every stage.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter_core::{advance_mean, covariance_schedule, riccati_rhs, Gains, PosteriorMoments};
use crate::integrator::{integrate_on_grid, Scheme};
use crate::rng::{
    domain::{OBS_V, SIGNAL_W},
    stream,
};
use crate::spectral_model::{sigma0_f, ModelConfig};
use crate::trace::{ModeTrace, TraceRow, Variant};

/// Data-averaged moments of one mode at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequentistMoments {
    /// Mean of the signal itself.
    pub mu: f64,
    /// Mean of the state estimate.
    pub m_u: f64,
    /// Mean of the drift estimate.
    pub m_f: f64,
    /// Variance of the centered state estimate.
    pub p_u: f64,
    /// Covariance of the centered state and drift estimates.
    pub p_uf: f64,
    /// Variance of the drift estimate.
    pub p_f: f64,
}

/// Gap between the frequentist and posterior covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaP {
    pub d_u: f64,
    pub d_uf: f64,
    pub d_f: f64,
}

impl DeltaP {
    /// Componentwise difference `p - sigma`.
    pub fn between(p: &FrequentistMoments, sigma: &PosteriorMoments) -> DeltaP {
        DeltaP {
            d_u: p.p_u - sigma.sigma_u,
            d_uf: p.p_uf - sigma.sigma_uf,
            d_f: p.p_f - sigma.sigma_f,
        }
    }
}

/// Right-hand side of the bias block `(mu, m_u, m_f)` for true drift
/// coefficient `f_star`.
pub fn bias_rhs(fm: &FrequentistMoments, gains: &Gains, f_star: f64, k: u32) -> (f64, f64, f64) {
    let a = f64::from(k) * f64::from(k);
    let d_mu = -a * fm.mu + f_star;
    let d_mu_hat = -a * fm.m_u + fm.m_f - gains.k_u * (fm.m_u - fm.mu);
    let d_mf = -gains.k_f * (fm.m_u - fm.mu);
    (d_mu, d_mu_hat, d_mf)
}

/// Right-hand side of the estimator covariance block `(p_u, p_uf, p_f)`.
pub fn freq_cov_rhs(
    fm: &FrequentistMoments,
    gains: &Gains,
    k: u32,
    gamma: f64,
    rho: f64,
) -> (f64, f64, f64) {
    let a = f64::from(k) * f64::from(k);
    let (ku, kf) = (gains.k_u, gains.k_f);
    let d_pu = -2.0 * a * fm.p_u + 2.0 * fm.p_uf + gamma - 2.0 * ku * fm.p_u + rho * ku * ku;
    let d_puf = -a * fm.p_uf + fm.p_f - ku * fm.p_uf - kf * fm.p_u + rho * ku * kf;
    let d_pf = -2.0 * kf * fm.p_uf + rho * kf * kf;
    (d_pu, d_puf, d_pf)
}

/// Lyapunov diagnostic for the covariance gap:
/// `V = (d_f)^2 / 2 + k_f (d_uf)^2 + (k_f)^2 (d_u)^2 / 2`.
pub fn lyapunov(delta: &DeltaP, k_f: f64) -> f64 {
    0.5 * delta.d_f * delta.d_f
        + k_f * delta.d_uf * delta.d_uf
        + 0.5 * k_f * k_f * delta.d_u * delta.d_u
}

/// State layout of the joint nine-component system.
///
/// Order: `sigma_u, sigma_uf, sigma_f, mu, m_u, m_f, p_u, p_uf, p_f`.
fn joint_rhs(x: &[f64; 9], k: u32, gamma: f64, rho: f64, f_star: f64) -> [f64; 9] {
    let m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: x[0], sigma_uf: x[1], sigma_f: x[2] };
    let (ds_u, ds_uf, ds_f) = riccati_rhs(&m, k, gamma, rho);
    let g = m.gains(rho);
    let fm = FrequentistMoments { mu: x[3], m_u: x[4], m_f: x[5], p_u: x[6], p_uf: x[7], p_f: x[8] };
    let (d_mu, d_mu_hat, d_mf) = bias_rhs(&fm, &g, f_star, k);
    let (d_pu, d_puf, d_pf) = freq_cov_rhs(&fm, &g, k, gamma, rho);
    [ds_u, ds_uf, ds_f, d_mu, d_mu_hat, d_mf, d_pu, d_puf, d_pf]
}

/// Joint posterior and frequentist moments of one mode on a time grid.
#[derive(Debug, Clone)]
pub struct MomentTrace {
    pub k: u32,
    /// True drift coefficient the data distribution was centered on.
    pub f_star: f64,
    pub t: Vec<f64>,
    /// One nine-component state per output time; see [`MomentTrace::freq`].
    pub states: Vec<[f64; 9]>,
}

impl MomentTrace {
    /// Posterior covariance at output index `i` (means are not tracked
    /// here and read as zero).
    pub fn posterior(&self, i: usize) -> PosteriorMoments {
        let x = &self.states[i];
        PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: x[0], sigma_uf: x[1], sigma_f: x[2] }
    }

    /// Frequentist block at output index `i`.
    pub fn freq(&self, i: usize) -> FrequentistMoments {
        let x = &self.states[i];
        FrequentistMoments { mu: x[3], m_u: x[4], m_f: x[5], p_u: x[6], p_uf: x[7], p_f: x[8] }
    }

    /// Gains at output index `i`.
    pub fn gains(&self, i: usize, rho: f64) -> Gains {
        self.posterior(i).gains(rho)
    }

    /// Covariance gap at output index `i`.
    pub fn delta_p(&self, i: usize) -> DeltaP {
        DeltaP::between(&self.freq(i), &self.posterior(i))
    }

    /// Lyapunov diagnostic at output index `i`.
    pub fn lyapunov_at(&self, i: usize, rho: f64) -> f64 {
        lyapunov(&self.delta_p(i), self.gains(i, rho).k_f)
    }

    /// Squared per-mode contraction quantity
    /// `sigma_f + p_f + (m_f - f_star)^2` at output index `i`.
    pub fn phi_sq(&self, i: usize) -> f64 {
        let x = &self.states[i];
        let bias = x[5] - self.f_star;
        x[2] + x[8] + bias * bias
    }

    /// Renders the trace with extended (data-averaged) columns.
    pub fn to_mode_trace(&self, rho: f64) -> ModeTrace {
        let rows = (0..self.t.len())
            .map(|i| {
                let x = &self.states[i];
                let g = self.gains(i, rho);
                TraceRow {
                    t: self.t[i],
                    sigma_u: Some(x[0]),
                    sigma_uf: Some(x[1]),
                    sigma_f: x[2],
                    k_u: Some(g.k_u),
                    k_f: Some(g.k_f),
                    mu: Some(x[3]),
                    m_u: Some(x[4]),
                    m_f: Some(x[5]),
                    p_u: Some(x[6]),
                    p_uf: Some(x[7]),
                    p_f: Some(x[8]),
                    v: Some(self.lyapunov_at(i, rho)),
                    ..TraceRow::default()
                }
            })
            .collect();
        ModeTrace { variant: Variant::Dynamic, k: self.k, rows }
    }
}

/// Integrates the joint nine-component system for mode `k` on `out_times`.
pub fn run_moments(
    k: u32,
    f_star_k: f64,
    config: &ModelConfig,
    out_times: &[f64],
    scheme: Scheme,
) -> Result<MomentTrace> {
    config.validate()?;
    if k == 0 {
        return Err(Error::parameter("mode index k must be at least 1"));
    }
    let a = f64::from(k) * f64::from(k);
    let x0 = [0.0, 0.0, sigma0_f(k, config.alpha), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let l = [-2.0 * a, -a, 0.0, -a, -a, 0.0, -2.0 * a, -a, 0.0];
    let (gamma, rho) = (config.gamma, config.rho);
    let states = integrate_on_grid(x0, out_times, &l, scheme, k, |_t, x| {
        joint_rhs(x, k, gamma, rho, f_star_k)
    })?;
    Ok(MomentTrace { k, f_star: f_star_k, t: out_times.to_vec(), states })
}

/// First time the product `k_f * t` stabilizes: the earliest grid time
/// `t0 > 0` such that over `[t0, 10 t0]` (at least five grid points; the
/// grid must reach at least `9 t0`) the product varies by no more than 10%
/// of its largest magnitude in that window.
pub fn detect_t_star(t: &[f64], kf: &[f64]) -> Option<f64> {
    assert_eq!(t.len(), kf.len(), "time and gain series must align");
    let t_end = *t.last()?;
    for (i, &t0) in t.iter().enumerate() {
        if t0 <= 0.0 {
            continue;
        }
        if t_end < 9.0 * t0 {
            return None;
        }
        let window: Vec<f64> = (i..t.len())
            .take_while(|&j| t[j] <= 10.0 * t0)
            .map(|j| kf[j] * t[j])
            .collect();
        if window.len() < 5 {
            continue;
        }
        let max = window.iter().cloned().fold(f64::MIN, f64::max);
        let min = window.iter().cloned().fold(f64::MAX, f64::min);
        let scale = window.iter().fold(0f64, |acc, v| acc.max(v.abs()));
        if scale > 0.0 && max - min <= 0.10 * scale {
            return Some(t0);
        }
    }
    None
}

/// One replicate-consistency check point.
#[derive(Debug, Clone, Copy)]
pub struct McCheck {
    pub t: f64,
    /// Empirical mean of the drift estimate over replicates.
    pub mean: f64,
    /// Empirical variance over replicates.
    pub var: f64,
    /// Data-averaged mean from the moment ODEs.
    pub m_ref: f64,
    /// Estimator variance from the moment ODEs.
    pub p_ref: f64,
    /// Standard error of the empirical mean.
    pub se_mean: f64,
    /// Standard error of the empirical variance.
    pub se_var: f64,
}

/// Runs `replicas` independent filter replicates on a uniform grid of step
/// `h` and compares the empirical mean and variance of the drift estimate
/// against the moment ODEs at each requested time.
///
/// The posterior covariance (hence the gain schedule) is data-independent,
/// so it is computed once and shared. Replicates run in parallel; their
/// per-replicate results are reduced in a fixed order, so the outcome
/// depends only on the seed.
pub fn mc_mean_consistency(
    k: u32,
    f_star_k: f64,
    config: &ModelConfig,
    t_checks: &[f64],
    replicas: u32,
    h: f64,
) -> Result<Vec<McCheck>> {
    config.validate()?;
    if replicas < 2 {
        return Err(Error::parameter("need at least 2 replicates"));
    }
    if t_checks.is_empty() || t_checks.windows(2).any(|w| w[1] <= w[0]) || t_checks[0] <= 0.0 {
        return Err(Error::parameter("check times must be positive and increasing"));
    }
    if !(h > 0.0) {
        return Err(Error::parameter(format!("step must be positive, got {h}")));
    }
    let t_max = *t_checks.last().unwrap();
    let n_steps = (t_max / h).round() as usize;
    if ((n_steps as f64) * h - t_max).abs() > 1e-9 * t_max {
        return Err(Error::parameter("t_checks must be multiples of the step h"));
    }
    let check_idx: Vec<usize> = t_checks.iter().map(|tc| (tc / h).round() as usize).collect();

    let (gamma, rho) = (config.gamma, config.rho);
    let schedule = covariance_schedule(k, gamma, rho, sigma0_f(k, config.alpha), h, n_steps)?;

    let mut out_grid = vec![0.0];
    out_grid.extend_from_slice(t_checks);
    let reference = run_moments(k, f_star_k, config, &out_grid, Scheme::Rk4Fixed { h })?;

    let a = f64::from(k) * f64::from(k);
    let e = (-a * h).exp();
    let drift_in = -f64::exp_m1(-a * h) / a * f_star_k;
    let noise_sd = (gamma * -f64::exp_m1(-2.0 * a * h) / (2.0 * a)).sqrt();
    let obs_sd = (rho * h).sqrt();
    let seed = config.seed;

    // One row of drift-estimate values per replicate, in replicate order.
    let samples: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut w = stream(seed, SIGNAL_W, k, u64::from(rep));
            let mut v = stream(seed, OBS_V, k, u64::from(rep));
            let mut u_true = 0.0;
            let mut ubar = 0.0;
            let mut fbar = 0.0;
            let mut picked = Vec::with_capacity(check_idx.len());
            let mut next_check = 0;
            for i in 0..n_steps {
                let d_y = u_true * h + obs_sd * v.sample::<f64, _>(StandardNormal);
                u_true = e * u_true + drift_in + noise_sd * w.sample::<f64, _>(StandardNormal);
                let m = PosteriorMoments { ubar, fbar, ..schedule[i] };
                let next = advance_mean(&m, d_y, k, rho, h);
                ubar = next.ubar;
                fbar = next.fbar;
                if next_check < check_idx.len() && i + 1 == check_idx[next_check] {
                    picked.push(fbar);
                    next_check += 1;
                }
            }
            picked
        })
        .collect();

    let mut checks = Vec::with_capacity(t_checks.len());
    for (j, &tc) in t_checks.iter().enumerate() {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (n, row) in samples.iter().enumerate() {
            let x = row[j];
            let delta = x - mean;
            mean += delta / (n + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = m2 / f64::from(replicas - 1);
        let fm = reference.freq(j + 1);
        checks.push(McCheck {
            t: tc,
            mean,
            var,
            m_ref: fm.m_f,
            p_ref: fm.p_f,
            se_mean: (fm.p_f / f64::from(replicas)).sqrt(),
            se_var: fm.p_f * (2.0 / f64::from(replicas - 1)).sqrt(),
        });
    }
    Ok(checks)
}
