//! Aggregate contraction of the drift posterior across modes.
//!
//! The per-mode contraction quantity is
//! `phi_t(k)^2 = sigma_f + p_f + (m_f - f_star)^2`: posterior spread plus
//! estimator spread plus squared bias. Its sum over all modes decays like
//! `t^(-2 min(alpha, beta) / (2 alpha + 5))`, and this module evaluates the
//! truncated sum with a certified tail bound, fits the decay exponent, and
//! spot-checks the posterior tail probabilities by simulation.
//!
//! Truncation: modes with `k^(2 alpha + 5)` well above `t / rho` have not
//! started learning, so their contribution is close to the prior plus the
//! truth energy; the tail is bounded by the integral test as
//! `2 (K^(-2 alpha) / (2 alpha) + cbar^2 K^(-2 beta - 2 delta) / (2 beta + 2 delta))`
//! with `cbar = 1` covering both truth modes. Modes are added until the
//! bound drops below `rtol` times the partial sum.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::frequentist::run_moments;
use crate::integrator::Scheme;
use crate::rng::{domain::MC_TAIL, stream};
use crate::slow_manifold::DEFAULT_K_STAR;
use crate::spectral_model::{f_star, ModelConfig, TruthMode};
use crate::stationary_drift::{mean_bias_closed, p_f_closed, sigma_f_closed};
use crate::trace::ContractionTrace;

/// Two-sided 97.5% standard normal quantile, for Wilson intervals.
const Z_95: f64 = 1.959963984540054;

/// Settings for aggregate contraction runs.
#[derive(Debug, Clone)]
pub struct ContractionConfig {
    pub model: ModelConfig,
    /// How the true drift coefficients are generated.
    pub truth_mode: TruthMode,
    /// Relative tail tolerance of the truncated mode sum.
    pub rtol: f64,
    /// Hard cap on explicitly summed modes.
    pub k_cap: u32,
    /// Regime split: modes up to here use the full moment ODEs in
    /// [`trace_split`], higher modes use the closed forms.
    pub k_star: u32,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            model: ModelConfig::default(),
            truth_mode: TruthMode::Deterministic,
            rtol: 1e-3,
            k_cap: 2_000_000,
            k_star: DEFAULT_K_STAR,
        }
    }
}

impl ContractionConfig {
    fn f_star_at(&self, k: u32) -> f64 {
        f_star(k, self.model.beta, self.model.delta, self.truth_mode, self.model.seed)
    }
}

/// The three-term per-mode contraction quantity.
pub fn phi_sq_mode(sigma_f: f64, p_f: f64, m_f: f64, f_star: f64) -> f64 {
    let bias = m_f - f_star;
    sigma_f + p_f + bias * bias
}

/// Per-mode contraction quantity from the closed stationary forms.
pub(crate) fn phi_sq_mode_closed(t: f64, k: u32, cfg: &ContractionConfig) -> f64 {
    let m = &cfg.model;
    let fs = cfg.f_star_at(k);
    phi_sq_mode(
        sigma_f_closed(t, k, m.alpha, m.rho),
        p_f_closed(t, k, m.alpha, m.rho),
        mean_bias_closed(t, k, m.alpha, m.rho, fs),
        fs,
    )
}

/// Integral-test bound on the modes above `k_used`.
pub fn tail_bound(k_used: u32, alpha: f64, beta: f64, delta: f64, cbar: f64) -> f64 {
    let kk = f64::from(k_used);
    2.0 * (kk.powf(-2.0 * alpha) / (2.0 * alpha)
        + cbar * cbar * kk.powf(-2.0 * beta - 2.0 * delta) / (2.0 * beta + 2.0 * delta))
}

/// Truncated total `sum_k phi_t(k)^2` from the closed forms.
///
/// Returns `(value, K_used, tail_bound)` with the tail bound at most
/// `rtol` times the value; fails with a truncation error when `k_cap`
/// modes do not suffice.
pub fn phi_sq_total(t: f64, cfg: &ContractionConfig) -> Result<(f64, u32, f64)> {
    let m = &cfg.model;
    let mut sum = 0.0;
    let mut k = 1u32;
    loop {
        sum += phi_sq_mode_closed(t, k, cfg);
        let tail = tail_bound(k, m.alpha, m.beta, m.delta, 1.0);
        if tail <= cfg.rtol * sum {
            return Ok((sum, k, tail));
        }
        if k >= cfg.k_cap {
            return Err(Error::Truncation {
                rtol: cfg.rtol,
                k_cap: cfg.k_cap,
                t,
                tail_bound: tail,
                partial: sum,
            });
        }
        k += 1;
    }
}

/// Least-squares slope of `log(vals)` against `log(t)` over the points
/// with `t` inside `window` (inclusive).
///
/// Needs at least five positive points in the window.
pub fn fit_loglog_slope(t: &[f64], vals: &[f64], window: (f64, f64)) -> Result<f64> {
    if t.len() != vals.len() {
        return Err(Error::FitWindow("time and value series must align".into()));
    }
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(vals)
        .filter(|(&tt, &v)| tt >= window.0 && tt <= window.1 && tt > 0.0 && v > 0.0)
        .map(|(&tt, &v)| (tt.ln(), v.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::FitWindow(format!(
            "need at least 5 positive points in [{}, {}], found {}",
            window.0,
            window.1,
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Fits the decay exponent of the total over a window spanning at least
/// three decades.
pub fn fit_rate(trace: &ContractionTrace, window: (f64, f64)) -> Result<f64> {
    if !(window.0 > 0.0) || window.1 / window.0 < 0.999e3 {
        return Err(Error::FitWindow(format!(
            "rate fits need a window of at least three decades, got [{}, {}]",
            window.0, window.1
        )));
    }
    fit_loglog_slope(&trace.t, &trace.phi_sq_total, window)
}

/// Predicted decay exponent of the total, `-2 min(alpha, beta) / (2 alpha + 5)`.
pub fn theoretical_exponent(alpha: f64, beta: f64) -> f64 {
    -2.0 * alpha.min(beta) / (2.0 * alpha + 5.0)
}

fn running_slopes(t: &[f64], totals: &[f64]) -> Vec<Option<f64>> {
    (0..t.len())
        .map(|i| {
            let ti = t[i];
            if ti <= 0.0 {
                return None;
            }
            let w0 = ti / 10.0;
            // Require (almost) a full trailing decade of positive times.
            let first_pos = t.iter().copied().find(|&x| x > 0.0)?;
            if ti < 9.0 * first_pos {
                return None;
            }
            fit_loglog_slope(t, totals, (w0, ti)).ok()
        })
        .collect()
}

/// Evaluates the contraction trace entirely from the closed forms.
pub fn trace_closed(out_times: &[f64], cfg: &ContractionConfig) -> Result<ContractionTrace> {
    let mut trace = ContractionTrace {
        t: out_times.to_vec(),
        ..ContractionTrace::default()
    };
    for &t in out_times {
        let (v, k_used, tail) = phi_sq_total(t, cfg)?;
        trace.phi_sq_total.push(v);
        trace.k_used.push(k_used);
        trace.tail_bound.push(tail);
    }
    trace.slope_running = running_slopes(&trace.t, &trace.phi_sq_total);
    trace.per_mode = (1..=cfg.model.k_max)
        .map(|k| (k, out_times.iter().map(|&t| phi_sq_mode_closed(t, k, cfg)).collect()))
        .collect();
    Ok(trace)
}

/// Evaluates the contraction trace with the regime split: full moment ODEs
/// for modes up to `k_star`, closed forms above.
///
/// `out_times` must start at 0 so the ODE runs start from the prior.
pub fn trace_split(out_times: &[f64], cfg: &ContractionConfig) -> Result<ContractionTrace> {
    if out_times.first() != Some(&0.0) {
        return Err(Error::parameter("split evaluation needs an output grid starting at 0"));
    }
    let m = &cfg.model;
    let low: Vec<crate::frequentist::MomentTrace> = (1..=cfg.k_star)
        .map(|k| {
            run_moments(k, cfg.f_star_at(k), m, out_times, Scheme::growing_for_mode(k))
        })
        .collect::<Result<_>>()?;

    let mut trace = ContractionTrace {
        t: out_times.to_vec(),
        ..ContractionTrace::default()
    };
    for (i, &t) in out_times.iter().enumerate() {
        let mut sum: f64 = low.iter().map(|tr| tr.phi_sq(i)).sum();
        let mut k = cfg.k_star;
        loop {
            let tail = tail_bound(k, m.alpha, m.beta, m.delta, 1.0);
            if tail <= cfg.rtol * sum {
                trace.phi_sq_total.push(sum);
                trace.k_used.push(k);
                trace.tail_bound.push(tail);
                break;
            }
            if k >= cfg.k_cap {
                return Err(Error::Truncation {
                    rtol: cfg.rtol,
                    k_cap: cfg.k_cap,
                    t,
                    tail_bound: tail,
                    partial: sum,
                });
            }
            k += 1;
            sum += phi_sq_mode_closed(t, k, cfg);
        }
    }
    trace.slope_running = running_slopes(&trace.t, &trace.phi_sq_total);
    trace.per_mode = (1..=m.k_max)
        .map(|k| {
            let series = if k <= cfg.k_star {
                (0..out_times.len()).map(|i| low[(k - 1) as usize].phi_sq(i)).collect()
            } else {
                out_times.iter().map(|&t| phi_sq_mode_closed(t, k, cfg)).collect()
            };
            (k, series)
        })
        .collect();
    Ok(trace)
}

/// Schedule entry `(t, M_t)` paired with its default rule `M_t = log(e + t)`.
pub fn default_m_schedule(ts: &[f64]) -> Vec<(f64, f64)> {
    ts.iter().map(|&t| (t, (std::f64::consts::E + t).ln())).collect()
}

/// One simulated posterior-tail check point.
#[derive(Debug, Clone, Copy)]
pub struct TailCheckPoint {
    pub t: f64,
    /// Radius multiplier in force at this time.
    pub m: f64,
    /// Replicate-averaged posterior probability of
    /// `|F - f_star| >= M phi_t(k)`.
    pub p_bar: f64,
    /// Wilson 95% interval on the averaged probability.
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// Averages the posterior tail probability outside the radius
/// `M_t phi_t(k)` over simulated replicates of the drift estimate.
///
/// With the closed forms in hand the drift estimate at time `t` is exactly
/// Gaussian with mean `m_f(t)` and variance `p_f(t)`, so replicates are
/// drawn directly from that law and the posterior probability is a pair of
/// Gaussian tails around the drawn estimate.
pub fn contraction_mc_check(
    k: u32,
    cfg: &ContractionConfig,
    m_schedule: &[(f64, f64)],
    replicas: u32,
) -> Result<Vec<TailCheckPoint>> {
    cfg.model.validate()?;
    if k == 0 {
        return Err(Error::parameter("mode index k must be at least 1"));
    }
    if replicas == 0 {
        return Err(Error::parameter("need at least one replicate"));
    }
    let m = &cfg.model;
    let fs = cfg.f_star_at(k);
    let mut out = Vec::with_capacity(m_schedule.len());
    for (j, &(t, m_t)) in m_schedule.iter().enumerate() {
        if t < 0.0 || m_t < 0.0 {
            return Err(Error::parameter("schedule times and multipliers must be nonnegative"));
        }
        let sf = sigma_f_closed(t, k, m.alpha, m.rho);
        let pf = p_f_closed(t, k, m.alpha, m.rho);
        let mf = mean_bias_closed(t, k, m.alpha, m.rho, fs);
        let radius = m_t * phi_sq_mode(sf, pf, mf, fs).sqrt();
        let post_sd = sf.sqrt();
        let est_sd = pf.sqrt();
        let mut rng = stream(m.seed, MC_TAIL, k, j as u64);
        let mut acc = 0.0;
        for _ in 0..replicas {
            let fbar = mf + est_sd * rng.sample::<f64, _>(StandardNormal);
            let d = fbar - fs;
            let p = if post_sd == 0.0 {
                f64::from(u8::from(d.abs() >= radius))
            } else {
                0.5 * erfc((radius - d) / (post_sd * std::f64::consts::SQRT_2))
                    + 0.5 * erfc((radius + d) / (post_sd * std::f64::consts::SQRT_2))
            };
            acc += p;
        }
        let p_bar = acc / f64::from(replicas);
        let x = (p_bar * f64::from(replicas)).clamp(0.0, f64::from(replicas));
        let n = f64::from(replicas);
        let denom = n + Z_95 * Z_95;
        let center = (x + Z_95 * Z_95 / 2.0) / denom;
        let half = Z_95 * (x * (n - x) / n + Z_95 * Z_95 / 4.0).sqrt() / denom;
        out.push(TailCheckPoint {
            t,
            m: m_t,
            p_bar,
            wilson_low: (center - half).max(0.0),
            wilson_high: (center + half).min(1.0),
        });
    }
    Ok(out)
}
