//! Ground-truth signal paths and noisy observation increments per mode.
//!
//! The mode-`k` signal is the Ornstein-Uhlenbeck SDE
//! `dU = (-k^2 U + F*) dt + sqrt(gamma) dW`, observed through
//! `dY = U dt + sqrt(rho) dV`. The signal is advanced by its exact Gaussian
//! transition, so there is no discretization bias in the path itself at any
//! step size; only the observation integral uses a left-endpoint rule.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

/// A simulated signal path and its observation increments on a time grid.
#[derive(Debug, Clone)]
pub struct ModeTruthPath {
    /// Mode index.
    pub k: u32,
    /// Time grid, starting at `t = 0`.
    pub t: Vec<f64>,
    /// Signal values `U_t(k)` on the grid (`u[0] = 0`).
    pub u: Vec<f64>,
    /// Observation increments per step (`dy.len() = t.len() - 1`); increment
    /// `dy[i]` covers `[t[i], t[i+1])` with left-endpoint quadrature.
    pub dy: Vec<f64>,
}

/// Simulates one mode on `t_grid` with exact OU transitions.
///
/// Noise streams are keyed `(seed, SIGNAL_W, k)` and `(seed, OBS_V, k)`, so
/// signal and observation noise are independent and the path is reproducible
/// regardless of what other modes run concurrently.
pub fn simulate_mode(
    k: u32,
    f_star_k: f64,
    gamma: f64,
    rho: f64,
    t_grid: &[f64],
    seed: u64,
) -> Result<ModeTruthPath> {
    if k < 1 {
        return Err(Error::parameter("mode index must be >= 1"));
    }
    if !(gamma >= 0.0 && rho > 0.0) {
        return Err(Error::parameter(format!(
            "need gamma >= 0 and rho > 0, got gamma={gamma}, rho={rho}"
        )));
    }
    if t_grid.len() < 2 || t_grid[0] != 0.0 {
        return Err(Error::parameter("time grid must start at 0 and have >= 2 points"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::parameter("time grid must be strictly increasing"));
    }

    let mut rng_w = stream(seed, domain::SIGNAL_W, k, 0);
    let mut rng_v = stream(seed, domain::OBS_V, k, 0);
    let a = f64::from(k * k);
    let mut u = Vec::with_capacity(t_grid.len());
    let mut dy = Vec::with_capacity(t_grid.len() - 1);
    let mut cur = 0.0;
    u.push(cur);
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        dy.push(cur * h + (rho * h).sqrt() * rng_v.sample::<f64, _>(StandardNormal));
        // Exact transition: mean decays by e^{-k^2 h} toward F*/k^2, and the
        // integrated noise variance is gamma (1 - e^{-2 k^2 h}) / (2 k^2).
        let decay = (-a * h).exp();
        let noise_var = gamma * (-(-2.0 * a * h).exp_m1()) / (2.0 * a);
        cur = decay * cur
            + (-(-a * h).exp_m1()) * f_star_k / a
            + noise_var.sqrt() * rng_w.sample::<f64, _>(StandardNormal);
        u.push(cur);
    }
    Ok(ModeTruthPath { k, t: t_grid.to_vec(), u, dy })
}

/// Closed-form mean signal `mu_t = (F*/k^2)(1 - e^{-k^2 t})`.
pub fn signal_mean(k: u32, f_star_k: f64, t: f64) -> f64 {
    let a = f64::from(k * k);
    f_star_k / a * (-(-a * t).exp_m1())
}
