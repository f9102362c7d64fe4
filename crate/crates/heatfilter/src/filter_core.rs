//! Per-mode Kalman filter: posterior moments, Riccati flow, mean update.
//!
//! Each Fourier mode `k` carries a two-dimensional state `(U_k, F_k)` with
//! linear drift, so the posterior stays Gaussian and is fully described by
//! the mean pair and the 2x2 covariance `(sigma_u, sigma_uf, sigma_f)`.
//! The covariance solves a closed Riccati ODE independent of the data; the
//! means are driven by the observation increments through the gains
//! `K_u = sigma_u / rho` and `K_f = sigma_uf / rho`.
//!
//! The covariance is advanced with classic RK4 steps. The mean update uses
//! an exponential factorization of the state decay over the step, which
//! stays accurate when `k^2 h` is not small.

use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::simulator::ModeTruthPath;
use crate::spectral_model::{sigma0_f, ModelConfig};
use crate::trace::{ModeTrace, TraceRow, Variant};

/// Negative excursions of a variance below this magnitude are treated as
/// roundoff and clamped to zero; anything larger aborts the run.
const VARIANCE_CLAMP: f64 = 1e-12;

/// Slack allowed in the Cauchy-Schwarz check on the posterior covariance.
const CS_SLACK: f64 = 1e-10;

/// Slack allowed in the monotonicity check on the drift variance.
const MONOTONE_SLACK: f64 = 1e-12;

/// Posterior mean and covariance of one mode's `(state, drift)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    /// Posterior mean of the state coefficient.
    pub ubar: f64,
    /// Posterior mean of the drift coefficient.
    pub fbar: f64,
    /// Posterior state variance.
    pub sigma_u: f64,
    /// Posterior state-drift covariance.
    pub sigma_uf: f64,
    /// Posterior drift variance.
    pub sigma_f: f64,
}

/// Kalman gains of the mean update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub k_u: f64,
    pub k_f: f64,
}

impl PosteriorMoments {
    /// Prior at `t = 0`: zero means, zero state uncertainty, and drift
    /// variance `k^(-2 alpha - 1)`.
    pub fn prior(k: u32, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::parameter("mode index k must be at least 1"));
        }
        if !(alpha > 0.0) {
            return Err(Error::parameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(PosteriorMoments {
            ubar: 0.0,
            fbar: 0.0,
            sigma_u: 0.0,
            sigma_uf: 0.0,
            sigma_f: sigma0_f(k, alpha),
        })
    }

    /// Gains implied by the current covariance.
    pub fn gains(&self, rho: f64) -> Gains {
        Gains { k_u: self.sigma_u / rho, k_f: self.sigma_uf / rho }
    }
}

/// Right-hand side of the covariance Riccati system for mode `k`.
pub fn riccati_rhs(m: &PosteriorMoments, k: u32, gamma: f64, rho: f64) -> (f64, f64, f64) {
    let a = (k as f64) * (k as f64);
    let d_su = -2.0 * a * m.sigma_u + 2.0 * m.sigma_uf + gamma - m.sigma_u * m.sigma_u / rho;
    let d_suf = -a * m.sigma_uf + m.sigma_f - m.sigma_u * m.sigma_uf / rho;
    let d_sf = -m.sigma_uf * m.sigma_uf / rho;
    (d_su, d_suf, d_sf)
}

/// Advances the covariance block by one RK4 step of size `h`.
///
/// Keeps the means untouched. Variances that dip below zero by no more
/// than roundoff are clamped back to zero; a larger violation reports
/// instability (the caller fills in the time).
pub fn advance_covariance(
    m: &PosteriorMoments,
    k: u32,
    gamma: f64,
    rho: f64,
    h: f64,
) -> Result<PosteriorMoments> {
    let x0 = [m.sigma_u, m.sigma_uf, m.sigma_f];
    let x1 = rk4_step(0.0, &x0, h, &|_, x| {
        let probe = PosteriorMoments {
            ubar: 0.0,
            fbar: 0.0,
            sigma_u: x[0],
            sigma_uf: x[1],
            sigma_f: x[2],
        };
        let (a, b, c) = riccati_rhs(&probe, k, gamma, rho);
        [a, b, c]
    });
    let clamp = |name: &str, v: f64| -> Result<f64> {
        if !v.is_finite() || v < -VARIANCE_CLAMP {
            Err(Error::Instability {
                k,
                t: f64::NAN,
                detail: format!("{name} left the admissible range: {v}"),
            })
        } else {
            Ok(v.max(0.0))
        }
    };
    Ok(PosteriorMoments {
        ubar: m.ubar,
        fbar: m.fbar,
        sigma_u: clamp("sigma_u", x1[0])?,
        sigma_uf: x1[1],
        sigma_f: clamp("sigma_f", x1[2])?,
    })
}

/// Advances the posterior means over one step of size `h` given the
/// observation increment `d_y` on that step.
///
/// Gains are evaluated from the covariance currently stored in `m`, i.e.
/// at the left endpoint. The state mean integrates its decay exactly:
/// with `a = k^2`, `E = exp(-a h)` and `h phi = (1 - E) / a`,
///
/// ```text
/// ubar' = E ubar + (h phi) (fbar - K_u ubar + K_u d_y / h)
/// fbar' = fbar - K_f (ubar h - d_y)
/// ```
///
/// so a noiseless increment `d_y = ubar h` with `fbar = 0` reproduces the
/// exact decay `ubar' = E ubar`.
pub fn advance_mean(m: &PosteriorMoments, d_y: f64, k: u32, rho: f64, h: f64) -> PosteriorMoments {
    let g = m.gains(rho);
    let a = (k as f64) * (k as f64);
    let e = (-a * h).exp();
    let h_phi = -f64::exp_m1(-a * h) / a;
    let forcing = m.fbar - g.k_u * m.ubar + g.k_u * d_y / h;
    PosteriorMoments {
        ubar: e * m.ubar + h_phi * forcing,
        fbar: m.fbar - g.k_f * (m.ubar * h - d_y),
        ..*m
    }
}

/// Riccati solution sampled on a uniform grid of `n_steps` steps of size
/// `h`, starting from the prior with drift variance `sigma0`.
///
/// Entry `i` holds the covariance at time `i h`, so the returned vector has
/// `n_steps + 1` entries. Useful for precomputing a gain schedule shared by
/// many replicate runs.
pub fn covariance_schedule(
    k: u32,
    gamma: f64,
    rho: f64,
    sigma0: f64,
    h: f64,
    n_steps: usize,
) -> Result<Vec<PosteriorMoments>> {
    if !(h > 0.0) || !(rho > 0.0) || gamma < 0.0 || !(sigma0 >= 0.0) {
        return Err(Error::parameter("covariance_schedule needs h > 0, rho > 0, gamma >= 0, sigma0 >= 0"));
    }
    let mut m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: 0.0, sigma_uf: 0.0, sigma_f: sigma0 };
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(m);
    for i in 0..n_steps {
        m = advance_covariance(&m, k, gamma, rho, h).map_err(|e| e.at_time(i as f64 * h))?;
        out.push(m);
    }
    Ok(out)
}

impl Error {
    /// Fills the time field of an instability report.
    pub(crate) fn at_time(self, t_now: f64) -> Error {
        match self {
            Error::Instability { k, detail, .. } => Error::Instability { k, t: t_now, detail },
            other => other,
        }
    }
}

/// Runs the full filter for one mode along a simulated observation path.
///
/// Produces one trace row per grid point, starting with the prior at
/// `t = 0`. Each step first updates the means with the left-endpoint
/// gains, then advances the covariance, then checks that the covariance
/// stays admissible (Cauchy-Schwarz within `1e-10`, drift variance
/// nonincreasing within `1e-12`).
pub fn run_filter(k: u32, path: &ModeTruthPath, config: &ModelConfig) -> Result<ModeTrace> {
    config.validate()?;
    if path.k != k {
        return Err(Error::parameter(format!(
            "path is for mode {} but filter asked for mode {k}",
            path.k
        )));
    }
    if path.t.len() < 2 || path.dy.len() + 1 != path.t.len() {
        return Err(Error::parameter("observation path must have one increment per step"));
    }
    let mut m = PosteriorMoments::prior(k, config.alpha)?;
    let mut rows = Vec::with_capacity(path.t.len());
    let push = |rows: &mut Vec<TraceRow>, t: f64, m: &PosteriorMoments, g: Gains| {
        rows.push(TraceRow {
            t,
            ubar: Some(m.ubar),
            fbar: Some(m.fbar),
            sigma_u: Some(m.sigma_u),
            sigma_uf: Some(m.sigma_uf),
            sigma_f: m.sigma_f,
            k_u: Some(g.k_u),
            k_f: Some(g.k_f),
            ..TraceRow::default()
        });
    };
    push(&mut rows, path.t[0], &m, m.gains(config.rho));
    for i in 0..path.dy.len() {
        let h = path.t[i + 1] - path.t[i];
        if !(h > 0.0) {
            return Err(Error::parameter("observation grid must be strictly increasing"));
        }
        let prev_sigma_f = m.sigma_f;
        let mean = advance_mean(&m, path.dy[i], k, config.rho, h);
        let cov = advance_covariance(&m, k, config.gamma, config.rho, h)
            .map_err(|e| e.at_time(path.t[i + 1]))?;
        m = PosteriorMoments { ubar: mean.ubar, fbar: mean.fbar, ..cov };
        if m.sigma_uf * m.sigma_uf > m.sigma_u * m.sigma_f + CS_SLACK {
            return Err(Error::Instability {
                k,
                t: path.t[i + 1],
                detail: format!(
                    "covariance lost positivity: sigma_uf^2 = {} exceeds sigma_u sigma_f = {}",
                    m.sigma_uf * m.sigma_uf,
                    m.sigma_u * m.sigma_f
                ),
            });
        }
        if m.sigma_f > prev_sigma_f + MONOTONE_SLACK {
            return Err(Error::Instability {
                k,
                t: path.t[i + 1],
                detail: format!("drift variance increased from {prev_sigma_f} to {}", m.sigma_f),
            });
        }
        push(&mut rows, path.t[i + 1], &m, m.gains(config.rho));
    }
    Ok(ModeTrace { variant: Variant::Dynamic, k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::rng::{domain::OBS_V, stream};
    use crate::simulator::simulate_mode;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn riccati_gamma_drives_state_variance() {
        let m = PosteriorMoments { ubar: 0.3, fbar: -0.7, sigma_u: 0.0, sigma_uf: 0.0, sigma_f: 0.0 };
        let (du, duf, df) = riccati_rhs(&m, 3, 1.0, 2.0);
        assert_eq!(du, 1.0);
        assert_eq!(duf, 0.0);
        assert_eq!(df, 0.0);
    }

    #[test]
    fn riccati_hand_example() {
        let m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: 0.1, sigma_uf: 0.02, sigma_f: 0.25 };
        let (du, duf, df) = riccati_rhs(&m, 2, 1.0, 1.0);
        assert_relative_eq!(du, 0.23, epsilon = 1e-15);
        assert_relative_eq!(duf, 0.168, epsilon = 1e-15);
        assert_relative_eq!(df, -0.0004, epsilon = 1e-15);
    }

    #[test]
    fn riccati_equilibrium_state_variance() {
        // With the drift fully learned (sigma_uf = sigma_f = 0) the state
        // variance settles at -rho + sqrt(rho^2 + rho gamma) for k = 1.
        for (gamma, rho) in [(1.0f64, 1.0f64), (1.0, 4.0), (0.5, 2.0)] {
            let c0 = -rho + (rho * rho + rho * gamma).sqrt();
            let m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: c0, sigma_uf: 0.0, sigma_f: 0.0 };
            let (du, _, _) = riccati_rhs(&m, 1, gamma, rho);
            assert!(du.abs() < 1e-14, "residual {du} at gamma={gamma} rho={rho}");
        }
        let c0 = -4.0 + 20f64.sqrt();
        assert_relative_eq!(c0, 0.4721359549995796, epsilon = 1e-15);
    }

    #[test]
    fn covariance_zero_state_is_fixed_without_noise() {
        let m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: 0.0, sigma_uf: 0.0, sigma_f: 0.0 };
        let next = advance_covariance(&m, 1, 0.0, 1.0, 0.1).unwrap();
        assert_eq!(next.sigma_u, 0.0);
        assert_eq!(next.sigma_uf, 0.0);
        assert_eq!(next.sigma_f, 0.0);
    }

    #[test]
    fn covariance_rejects_blowup() {
        let m = PosteriorMoments { ubar: 0.0, fbar: 0.0, sigma_u: 0.0, sigma_uf: 1e6, sigma_f: 0.0 };
        let err = advance_covariance(&m, 1, 1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Instability { k: 1, .. }));
    }

    #[test]
    fn state_variance_approaches_equilibrium_slowly() {
        // The state variance converges to C0 = sqrt(2) - 1 only as fast as
        // the drift variance dies: the gap tracks sigma_f(t) ~ 1/t, so it
        // is still about 5e-3 at t = 200 and first drops under 1e-3 near
        // t = 1000.
        let c0 = 2f64.sqrt() - 1.0;
        let h = 0.01;
        let mut m = PosteriorMoments::prior(1, 0.5).unwrap();
        let mut gap_200 = f64::NAN;
        for i in 0..200_000 {
            m = advance_covariance(&m, 1, 1.0, 1.0, h).unwrap();
            let t = (i + 1) as f64 * h;
            if (t - 200.0).abs() < h / 2.0 {
                gap_200 = (m.sigma_u - c0).abs();
            }
        }
        assert!(
            (4e-3..6e-3).contains(&gap_200),
            "gap at t=200 was {gap_200}, expected about 5e-3"
        );
        let gap_2000 = (m.sigma_u - c0).abs();
        assert!(gap_2000 < 1e-3, "gap at t=2000 was {gap_2000}");
    }

    #[test]
    fn high_mode_state_variance_sits_on_slow_manifold() {
        let k = 8u32;
        let eps = 1.0 / 64.0;
        let h = 1e-3;
        let mut m = PosteriorMoments::prior(k, 0.5).unwrap();
        for i in 0..1_500 {
            m = advance_covariance(&m, k, 1.0, 1.0, h).unwrap();
            let t = (i + 1) as f64 * h;
            if t >= 1.0 {
                let dev = (m.sigma_u - eps * 0.5).abs();
                assert!(dev < 1e-5, "deviation {dev} at t={t}");
            }
        }
    }

    #[test]
    fn mean_decays_exactly_on_noiseless_increment() {
        let m = PosteriorMoments { ubar: 0.8, fbar: 0.0, sigma_u: 0.3, sigma_uf: 0.1, sigma_f: 0.5 };
        let h = 0.07;
        let k = 3u32;
        let d_y = m.ubar * h;
        let next = advance_mean(&m, d_y, k, 1.0, h);
        assert_relative_eq!(next.ubar, 0.8 * (-9.0 * h).exp(), epsilon = 1e-15);
        assert_eq!(next.fbar, 0.0);
    }

    #[test]
    fn zero_cross_gain_freezes_drift_mean() {
        let m = PosteriorMoments { ubar: 0.4, fbar: 0.9, sigma_u: 0.2, sigma_uf: 0.0, sigma_f: 0.3 };
        let next = advance_mean(&m, -0.35, 2, 1.0, 0.05);
        assert_eq!(next.fbar, 0.9);
    }

    #[test]
    fn drift_mean_expectation_without_signal_noise() {
        // gamma = 0, k = 1, rho = 1, prior drift variance 1, true drift
        // coefficient 1. The data-averaged drift mean then solves the bias
        // ODE and equals 0.143902492258 at t = 1; the replicate average
        // must match it within three standard errors,
        // 3 sqrt(p_f(1) / R) = 3 sqrt(0.123195 / 1e4) = 0.0105.
        let h = 1e-3;
        let n_steps = 1_000;
        let schedule = covariance_schedule(1, 0.0, 1.0, 1.0, h, n_steps).unwrap();
        let reps = 10_000u64;
        let sqrt_h = h.sqrt();
        let mut sum = 0.0;
        for rep in 0..reps {
            let mut rng = stream(0x51ab_00d5, OBS_V, 1, rep);
            let mut ubar = 0.0;
            let mut fbar = 0.0;
            for i in 0..n_steps {
                let t = i as f64 * h;
                let u_true = -f64::exp_m1(-t);
                let d_y = u_true * h + sqrt_h * rng.sample::<f64, _>(StandardNormal);
                let m = PosteriorMoments { ubar, fbar, ..schedule[i] };
                let next = advance_mean(&m, d_y, 1, 1.0, h);
                ubar = next.ubar;
                fbar = next.fbar;
            }
            sum += fbar;
        }
        let mean = sum / reps as f64;
        assert!(
            (mean - 0.143902492258).abs() < 0.0105,
            "replicate mean {mean} vs reference 0.143902492258"
        );
    }

    #[test]
    fn zero_data_keeps_means_at_zero() {
        let t = uniform_grid(5.0, 0.05).unwrap();
        let path = ModeTruthPath {
            k: 2,
            t: t.clone(),
            u: vec![0.0; t.len()],
            dy: vec![0.0; t.len() - 1],
        };
        let config = ModelConfig::default();
        let trace = run_filter(2, &path, &config).unwrap();
        for row in &trace.rows {
            assert_eq!(row.ubar, Some(0.0));
            assert_eq!(row.fbar, Some(0.0));
        }
        // Covariance still follows the data-free Riccati flow.
        let last = trace.rows.last().unwrap();
        assert!(last.sigma_f < 0.25 && last.sigma_f > 0.0);
    }

    #[test]
    fn drift_variance_balances_time_late_in_the_run() {
        let config = ModelConfig { t_end: 1_000.0, ..ModelConfig::default() };
        let t = uniform_grid(config.t_end, 0.01).unwrap();
        let path = simulate_mode(1, 1.0, config.gamma, config.rho, &t, 7).unwrap();
        let trace = run_filter(1, &path, &config).unwrap();
        for row in trace.rows.iter().filter(|r| r.t >= 100.0) {
            let prod = row.sigma_f * row.t;
            assert!(
                (0.3..3.0).contains(&prod),
                "sigma_f * t = {prod} at t = {}",
                row.t
            );
        }
    }

    #[test]
    fn high_mode_learning_onset_is_delayed() {
        // For k = 8 (alpha = 1/2) the drift variance stays within 5% of its
        // prior until about t = 0.05 * 8^6 = 13107.
        let k = 8u32;
        let sigma0 = sigma0_f(k, 0.5);
        let h = 0.1 / 64.0;
        let t_limit = 0.05 * 8f64.powi(6);
        let mut m = PosteriorMoments::prior(k, 0.5).unwrap();
        let mut t = 0.0;
        while t < t_limit {
            m = advance_covariance(&m, k, 1.0, 1.0, h).unwrap();
            t += h;
        }
        assert!(
            m.sigma_f >= 0.95 * sigma0,
            "sigma_f fell to {} of prior before t = {t_limit}",
            m.sigma_f / sigma0
        );
    }

    #[test]
    fn mismatched_paths_are_rejected() {
        let config = ModelConfig::default();
        let path = ModeTruthPath {
            k: 1,
            t: vec![0.0, 0.1, 0.2],
            u: vec![0.0; 3],
            dy: vec![0.0; 2],
        };
        assert!(matches!(run_filter(2, &path, &config), Err(Error::Parameter(_))));
        let bad = ModeTruthPath { dy: vec![0.0; 1], ..path };
        assert!(matches!(run_filter(1, &bad, &config), Err(Error::Parameter(_))));
    }

    #[test]
    fn gain_schedule_matches_stepwise_advance() {
        let sched = covariance_schedule(2, 1.0, 1.0, 0.25, 0.01, 100).unwrap();
        let mut m = PosteriorMoments::prior(2, 0.5).unwrap();
        assert_relative_eq!(m.sigma_f, 0.25, epsilon = 1e-15);
        for i in 0..100 {
            assert_eq!(sched[i].sigma_f, m.sigma_f);
            m = advance_covariance(&m, 2, 1.0, 1.0, 0.01).unwrap();
        }
        assert_eq!(sched[100].sigma_u, m.sigma_u);
    }

    #[test]
    fn random_draws_change_nothing_in_gain_math() {
        // Gains are a pure function of the covariance.
        let mut rng = stream(9, OBS_V, 5, 0);
        let m = PosteriorMoments {
            ubar: rng.random::<f64>(),
            fbar: rng.random::<f64>(),
            sigma_u: 0.5,
            sigma_uf: -0.1,
            sigma_f: 0.4,
        };
        let g = m.gains(2.0);
        assert_eq!(g.k_u, 0.25);
        assert_eq!(g.k_f, -0.05);
    }
}
