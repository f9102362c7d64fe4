//! Pure drift estimation under stationary observations.
//!
//! When the state is pinned at its equilibrium `k^(-2) F_k`, observing it
//! reduces to estimating a constant drift coefficient from a Brownian
//! observation with signal scale `k^(-2)`. Everything is explicit:
//!
//! ```text
//! sigma_f(t) = s0 / (s0 t / (rho k^4) + 1),          s0 = k^(-2 alpha - 1)
//! m_f(t)     = F_k (1 - sigma_f(t) / s0)
//! p_f(t)     = rho k^4 s0^2 t / (rho k^4 + s0 t)^2
//! ```
//!
//! with `m_f` and `p_f` the mean and variance of the drift estimate under
//! the data distribution. These closed forms are the reference the ODE
//! integrators and the sampling filter are checked against.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::integrator::{integrate_on_grid, rk4_step, Scheme};
use crate::rng::{domain::OBS_V, stream};
use crate::simulator::ModeTruthPath;
use crate::spectral_model::{sigma0_f, ModelConfig};
use crate::trace::{ModeTrace, TraceRow, Variant};

/// Drift-only posterior and its data-averaged moments at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryState {
    /// Drift mean (deterministic runs carry the data-averaged mean here).
    pub fbar: f64,
    /// Posterior drift variance.
    pub sigma_f: f64,
    /// Data-averaged drift mean.
    pub m_f: f64,
    /// Frequentist variance of the drift estimate.
    pub p_f: f64,
}

fn check_mode(k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::parameter("mode index k must be at least 1"));
    }
    Ok(f64::from(k))
}

/// Closed-form posterior drift variance at time `t`.
pub fn sigma_f_closed(t: f64, k: u32, alpha: f64, rho: f64) -> f64 {
    let s0 = sigma0_f(k, alpha);
    let kf = f64::from(k);
    s0 / (s0 * t / (rho * kf.powi(4)) + 1.0)
}

/// Closed-form data-averaged drift mean at time `t` for true coefficient
/// `f_star`.
pub fn mean_bias_closed(t: f64, k: u32, alpha: f64, rho: f64, f_star: f64) -> f64 {
    let s0 = sigma0_f(k, alpha);
    f_star * (1.0 - sigma_f_closed(t, k, alpha, rho) / s0)
}

/// Closed-form frequentist variance of the drift estimate at time `t`.
pub fn p_f_closed(t: f64, k: u32, alpha: f64, rho: f64) -> f64 {
    let s0 = sigma0_f(k, alpha);
    let r = rho * f64::from(k).powi(4);
    r * s0 * s0 * t / ((r + s0 * t) * (r + s0 * t))
}

/// Right-hand side of the three stationary moment ODEs in the order
/// `(sigma_f, m_f, p_f)`.
fn stationary_rhs(x: &[f64; 3], k: u32, f_star: f64, rho: f64) -> [f64; 3] {
    let c = 1.0 / (f64::from(k).powi(4) * rho);
    let (s, m, p) = (x[0], x[1], x[2]);
    [-c * s * s, -c * s * (m - f_star), -2.0 * c * s * p + c * s * s]
}

/// Integrates the stationary moment ODEs on `out_times` (which must start
/// at 0), using the growing-step exponential scheme.
pub fn run_stationary_moments(
    k: u32,
    f_star_k: f64,
    config: &ModelConfig,
    out_times: &[f64],
) -> Result<Vec<StationaryState>> {
    config.validate()?;
    check_mode(k)?;
    let x0 = [sigma0_f(k, config.alpha), 0.0, 0.0];
    let rho = config.rho;
    let states = integrate_on_grid(
        x0,
        out_times,
        &[0.0; 3],
        Scheme::growing_for_mode(k),
        k,
        |_t, x| stationary_rhs(x, k, f_star_k, rho),
    )?;
    Ok(states
        .into_iter()
        .map(|x| StationaryState { fbar: x[1], sigma_f: x[0], m_f: x[1], p_f: x[2] })
        .collect())
}

/// Converts stationary moment output into a per-mode trace (extended
/// columns carry the data-averaged mean and variance).
pub fn moments_to_trace(
    k: u32,
    rho: f64,
    out_times: &[f64],
    states: &[StationaryState],
) -> ModeTrace {
    let kf = f64::from(k);
    let rows = out_times
        .iter()
        .zip(states)
        .map(|(&t, s)| TraceRow {
            t,
            fbar: Some(s.fbar),
            sigma_f: s.sigma_f,
            k_f: Some(s.sigma_f / (kf * kf * rho)),
            m_f: Some(s.m_f),
            p_f: Some(s.p_f),
            ..TraceRow::default()
        })
        .collect();
    ModeTrace { variant: Variant::Stationary, k, rows }
}

/// Simulates the stationary observation path: the state sits at
/// `k^(-2) f_star`, so increments are `k^(-2) f_star h + sqrt(rho h) xi`.
pub fn simulate_stationary_obs(
    k: u32,
    f_star_k: f64,
    rho: f64,
    t_grid: &[f64],
    seed: u64,
) -> Result<ModeTruthPath> {
    let kf = check_mode(k)?;
    if !(rho > 0.0) {
        return Err(Error::parameter(format!("rho must be positive, got {rho}")));
    }
    if t_grid.len() < 2 || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::parameter("time grid must start at 0 and increase strictly"));
    }
    let u_eq = f_star_k / (kf * kf);
    let mut rng = stream(seed, OBS_V, k, 0);
    let mut dy = Vec::with_capacity(t_grid.len() - 1);
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        dy.push(u_eq * h + (rho * h).sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(ModeTruthPath { k, t: t_grid.to_vec(), u: vec![u_eq; t_grid.len()], dy })
}

/// Runs the drift-only filter on an observation path.
///
/// The posterior variance follows its own ODE (advanced per step with RK4)
/// and the drift mean is updated with gain `K_f = k^(-2) sigma_f / rho`:
/// `fbar' = fbar - K_f (k^(-2) fbar h - dy)`. The true coefficient
/// `f_star_k` is only used to fill the closed-form reference columns.
pub fn run_stationary_filter(
    k: u32,
    f_star_k: f64,
    path: &ModeTruthPath,
    config: &ModelConfig,
) -> Result<ModeTrace> {
    config.validate()?;
    let kf = check_mode(k)?;
    if path.k != k {
        return Err(Error::parameter(format!(
            "path is for mode {} but filter asked for mode {k}",
            path.k
        )));
    }
    if path.t.len() < 2 || path.dy.len() + 1 != path.t.len() {
        return Err(Error::parameter("observation path must have one increment per step"));
    }
    let eps = 1.0 / (kf * kf);
    let rho = config.rho;
    let mut sigma = sigma0_f(k, config.alpha);
    let mut fbar = 0.0;
    let mut rows = Vec::with_capacity(path.t.len());
    let push = |rows: &mut Vec<TraceRow>, t: f64, fbar: f64, sigma: f64| {
        rows.push(TraceRow {
            t,
            fbar: Some(fbar),
            sigma_f: sigma,
            k_f: Some(eps * sigma / rho),
            m_f: Some(mean_bias_closed(t, k, config.alpha, rho, f_star_k)),
            p_f: Some(p_f_closed(t, k, config.alpha, rho)),
            ..TraceRow::default()
        });
    };
    push(&mut rows, path.t[0], fbar, sigma);
    for i in 0..path.dy.len() {
        let h = path.t[i + 1] - path.t[i];
        if !(h > 0.0) {
            return Err(Error::parameter("observation grid must be strictly increasing"));
        }
        let gain = eps * sigma / rho;
        fbar -= gain * (eps * fbar * h - path.dy[i]);
        sigma = rk4_step(path.t[i], &[sigma], h, &|_, x| {
            [-eps * eps / rho * x[0] * x[0]]
        })[0];
        push(&mut rows, path.t[i + 1], fbar, sigma);
    }
    Ok(ModeTrace { variant: Variant::Stationary, k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::log_grid;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_spot_values() {
        assert_relative_eq!(sigma_f_closed(1.0, 1, 0.5, 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(sigma_f_closed(16.0, 2, 0.5, 1.0), 0.2, epsilon = 1e-15);
        assert_relative_eq!(p_f_closed(1.0, 1, 0.5, 1.0), 0.25, epsilon = 1e-15);
        // At t = 64 and k = 2 half the prior variance is spent, so the mean
        // has covered half the distance to the truth.
        assert_relative_eq!(mean_bias_closed(64.0, 2, 0.5, 1.0, 0.5), 0.25, epsilon = 1e-15);
        // The frequentist variance never exceeds the posterior variance.
        for &t in &[0.1, 1.0, 10.0, 1e4] {
            assert!(p_f_closed(t, 3, 0.5, 1.0) < sigma_f_closed(t, 3, 0.5, 1.0));
        }
    }

    #[test]
    fn closed_forms_solve_the_moment_odes() {
        let (k, alpha, rho, f_star) = (2u32, 0.7, 1.5, 0.35);
        let t = 3.0;
        let d = 1e-5;
        let num = |f: &dyn Fn(f64) -> f64| (f(t + d) - f(t - d)) / (2.0 * d);
        let x = [
            sigma_f_closed(t, k, alpha, rho),
            mean_bias_closed(t, k, alpha, rho, f_star),
            p_f_closed(t, k, alpha, rho),
        ];
        let rhs = stationary_rhs(&x, k, f_star, rho);
        let ds = num(&|u| sigma_f_closed(u, k, alpha, rho));
        let dm = num(&|u| mean_bias_closed(u, k, alpha, rho, f_star));
        let dp = num(&|u| p_f_closed(u, k, alpha, rho));
        assert_relative_eq!(ds, rhs[0], max_relative = 1e-8);
        assert_relative_eq!(dm, rhs[1], max_relative = 1e-8);
        assert_relative_eq!(dp, rhs[2], max_relative = 1e-7);
    }

    #[test]
    fn growing_step_run_tracks_closed_forms() {
        let config = ModelConfig::default();
        let out = log_grid(1e-3, 100.0, 50).unwrap();
        for k in [1u32, 4] {
            let f_star = 1.0 / f64::from(k);
            let states = run_stationary_moments(k, f_star, &config, &out).unwrap();
            for (&t, s) in out.iter().zip(&states) {
                let sf = sigma_f_closed(t, k, config.alpha, config.rho);
                let mf = mean_bias_closed(t, k, config.alpha, config.rho, f_star);
                let pf = p_f_closed(t, k, config.alpha, config.rho);
                assert_relative_eq!(s.sigma_f, sf, max_relative = 1e-6);
                assert_relative_eq!(s.m_f, mf, max_relative = 1e-6, epsilon = 1e-12 * f_star);
                assert_relative_eq!(s.p_f, pf, max_relative = 1e-6, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn fixed_step_rk4_matches_closed_form_tightly() {
        // k = 1, h = 1e-3 out to t = 10: relative error well under 1e-6.
        let config = ModelConfig::default();
        let out: Vec<f64> = (0..=10).map(f64::from).collect();
        let states = integrate_on_grid(
            [1.0, 0.0, 0.0],
            &out,
            &[0.0; 3],
            Scheme::Rk4Fixed { h: 1e-3 },
            1,
            |_t, x| stationary_rhs(x, 1, 1.0, 1.0),
        )
        .unwrap();
        for (&t, x) in out.iter().zip(&states).skip(1) {
            assert_relative_eq!(
                x[0],
                sigma_f_closed(t, 1, config.alpha, config.rho),
                max_relative = 1e-6
            );
            assert_relative_eq!(
                x[1],
                mean_bias_closed(t, 1, config.alpha, config.rho, 1.0),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn sampling_filter_matches_data_averaged_moments() {
        // 1e4 replicate runs at k = 1, f_star = 1, grid h = 1e-3 to t = 1:
        // the replicate mean and variance of fbar(1) must match the closed
        // forms m_f(1) = 0.5 and p_f(1) = 0.25 within four standard errors.
        let config = ModelConfig::default();
        let h = 1e-3;
        let n = 1_000usize;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let reps = 10_000u64;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for rep in 0..reps {
            let path = simulate_stationary_obs(1, 1.0, 1.0, &t, 0xbead + rep).unwrap();
            let trace = run_stationary_filter(1, 1.0, &path, &config).unwrap();
            let f_end = trace.rows.last().unwrap().fbar.unwrap();
            let delta = f_end - mean;
            mean += delta / (rep + 1) as f64;
            m2 += delta * (f_end - mean);
        }
        let var = m2 / (reps - 1) as f64;
        let se_mean = (0.25f64 / reps as f64).sqrt();
        let se_var = 0.25 * (2.0 / (reps - 1) as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se_mean, "mean {mean} vs 0.5");
        assert!((var - 0.25).abs() < 4.0 * se_var, "variance {var} vs 0.25");
    }

    #[test]
    fn filter_reference_columns_use_closed_forms() {
        let config = ModelConfig::default();
        let t: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let path = simulate_stationary_obs(2, 0.5, 1.0, &t, 11).unwrap();
        let trace = run_stationary_filter(2, 0.5, &path, &config).unwrap();
        let row = &trace.rows[10];
        assert_relative_eq!(
            row.m_f.unwrap(),
            mean_bias_closed(1.0, 2, 0.5, 1.0, 0.5),
            epsilon = 1e-15
        );
        assert_relative_eq!(row.p_f.unwrap(), p_f_closed(1.0, 2, 0.5, 1.0), epsilon = 1e-15);
        // Posterior variance from the per-step RK4 also matches.
        assert_relative_eq!(row.sigma_f, sigma_f_closed(1.0, 2, 0.5, 1.0), max_relative = 1e-9);
    }

    #[test]
    fn observation_increments_have_the_right_law() {
        let n = 20_000usize;
        let h = 0.01;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let path = simulate_stationary_obs(2, 0.8, 1.0, &t, 99).unwrap();
        let mean: f64 = path.dy.iter().sum::<f64>() / n as f64;
        let expect = 0.8 / 4.0 * h;
        // SE of the mean increment is sqrt(rho h / n).
        let se = (h / n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "mean {mean} vs {expect}");
        let var: f64 =
            path.dy.iter().map(|d| (d - expect) * (d - expect)).sum::<f64>() / (n - 1) as f64;
        assert_relative_eq!(var, h, max_relative = 0.05);
        // Same seed reproduces the path bit for bit.
        let again = simulate_stationary_obs(2, 0.8, 1.0, &t, 99).unwrap();
        assert_eq!(path.dy, again.dy);
    }

    #[test]
    fn mode_sum_decays_at_the_predicted_rate() {
        // sum_k sigma_f(k, t) ~ t^(-2 alpha / (2 alpha + 5)); at alpha = 1/2
        // the exponent is -1/6. Fit over t in [1e2, 1e6] and allow 10%.
        let (alpha, rho) = (0.5, 1.0);
        let rtol = 1e-5;
        let ts: Vec<f64> = (0..=20).map(|i| 1e2 * 10f64.powf(i as f64 / 5.0)).collect();
        let mut logs = Vec::new();
        for &t in &ts {
            let mut sum = 0.0;
            let mut k = 1u32;
            loop {
                sum += sigma_f_closed(t, k, alpha, rho);
                let tail = f64::from(k).powf(-2.0 * alpha) / (2.0 * alpha);
                if tail <= rtol * sum {
                    break;
                }
                k += 1;
            }
            logs.push((t.ln(), sum.ln()));
        }
        let n = logs.len() as f64;
        let sx: f64 = logs.iter().map(|p| p.0).sum();
        let sy: f64 = logs.iter().map(|p| p.1).sum();
        let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 1.0 / 6.0).abs() < 0.1 / 6.0,
            "fitted slope {slope} vs -1/6"
        );
    }

    #[test]
    fn bad_inputs_are_rejected(){
        let config = ModelConfig::default();
        assert!(run_stationary_moments(0, 1.0, &config, &[0.0, 1.0]).is_err());
        assert!(simulate_stationary_obs(1, 1.0, 0.0, &[0.0, 1.0], 1).is_err());
        assert!(simulate_stationary_obs(1, 1.0, 1.0, &[0.5, 1.0], 1).is_err());
        let t = vec![0.0, 0.5, 1.0];
        let path = simulate_stationary_obs(3, 1.0, 1.0, &t, 1).unwrap();
        assert!(run_stationary_filter(2, 1.0, &path, &config).is_err());
    }
}
