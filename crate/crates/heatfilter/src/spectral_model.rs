//! Model configuration, drift truth, prior, and sine-basis synthesis.
//!
//! The spatial domain is `(0, pi)` with Dirichlet boundary conditions; all
//! fields are expanded in `sin(kx)`, `k = 1, 2, ...`, and the dynamics
//! decouple mode by mode. This module owns the global parameters, the ground
//! truth drift coefficients `F*(k) = c_k k^(-beta-1/2-delta)`, and the
//! Gaussian prior variances `sigma0_f(k) = k^(-2*alpha-1)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{domain, stream};

/// Global model and run parameters shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Model (signal) noise strength `gamma >= 0`.
    pub gamma: f64,
    /// Observation noise strength `rho > 0`.
    pub rho: f64,
    /// Prior decay exponent `alpha > 0`; prior variance `k^(-2*alpha-1)`.
    pub alpha: f64,
    /// Truth Sobolev regularity `beta > 0`.
    pub beta: f64,
    /// Truth decay margin `delta >= 0`.
    pub delta: f64,
    /// Highest simulated mode.
    pub k_max: u32,
    /// Base time step; per-mode steps are `min(dt_base, 0.1/k^2)`.
    pub dt_base: f64,
    /// Default run horizon.
    pub t_end: f64,
    /// Master RNG seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The reference experiment: `rho = gamma = 1`, `alpha = beta = 1/2`,
    /// `delta = 0`, truth `F*(k) = k^-1`, modes up to 8.
    fn default() -> Self {
        ModelConfig {
            gamma: 1.0,
            rho: 1.0,
            alpha: 0.5,
            beta: 0.5,
            delta: 0.0,
            k_max: 8,
            dt_base: 0.01,
            t_end: 100.0,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Validates the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::parameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::parameter(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::parameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::parameter(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::parameter(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.k_max < 1 {
            return Err(Error::parameter("k_max must be >= 1"));
        }
        if !(self.dt_base > 0.0) {
            return Err(Error::parameter(format!("dt_base must be > 0, got {}", self.dt_base)));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::parameter(format!("t_end must be > 0, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// How the truth coefficients `c_k` are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthMode {
    /// `c_k = 1` for every mode.
    Deterministic,
    /// `c_k` i.i.d. uniform on `[-1, 1]`, keyed by `(seed, k)`.
    UniformRandom,
}

/// The true drift coefficients `F*(k) = c_k k^(-beta-1/2-delta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTruth {
    /// `F*(k)` for `k = 1..=k_max` (index 0 is `k = 1`).
    pub coeffs: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    pub mode: TruthMode,
}

impl DriftTruth {
    /// Returns `F*(k)` for a 1-based mode index.
    pub fn coeff(&self, k: u32) -> f64 {
        self.coeffs[(k - 1) as usize]
    }
}

/// Raw envelope factor `c_k` for mode `k`.
///
/// Keyed by `(seed, k)` only, so the value of `c_k` does not depend on
/// `k_max` or on the order modes are generated in.
pub fn truth_envelope(k: u32, mode: TruthMode, seed: u64) -> f64 {
    match mode {
        TruthMode::Deterministic => 1.0,
        TruthMode::UniformRandom => stream(seed, domain::TRUTH, k, 0).random_range(-1.0..=1.0),
    }
}

/// Evaluates `F*(k) = c_k k^(-beta-1/2-delta)` for a single mode.
pub fn f_star(k: u32, beta: f64, delta: f64, mode: TruthMode, seed: u64) -> f64 {
    truth_envelope(k, mode, seed) * f64::from(k).powf(-beta - 0.5 - delta)
}

/// Builds the truth coefficients for modes `1..=k_max`.
pub fn make_truth(beta: f64, delta: f64, k_max: u32, mode: TruthMode, seed: u64) -> Result<DriftTruth> {
    if !(beta > 0.0) {
        return Err(Error::parameter(format!("beta must be > 0, got {beta}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::parameter(format!("delta must be >= 0, got {delta}")));
    }
    if k_max < 1 {
        return Err(Error::parameter("k_max must be >= 1"));
    }
    let coeffs = (1..=k_max).map(|k| f_star(k, beta, delta, mode, seed)).collect();
    Ok(DriftTruth { coeffs, beta, delta, mode })
}

/// Prior variance `sigma0_f(k) = k^(-2*alpha-1)`.
pub fn prior_variance(k: u32, alpha: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::parameter("mode index must be >= 1"));
    }
    if !(alpha > 0.0) {
        return Err(Error::parameter(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(sigma0_f(k, alpha))
}

/// Unchecked prior variance, for internal hot paths with validated inputs.
pub(crate) fn sigma0_f(k: u32, alpha: f64) -> f64 {
    f64::from(k).powf(-2.0 * alpha - 1.0)
}

/// Centered Gaussian prior on the drift coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub alpha: f64,
}

impl PriorSpec {
    /// Prior variance of mode `k`.
    pub fn variance(&self, k: u32) -> Result<f64> {
        prior_variance(k, self.alpha)
    }

    /// Prior mean of every mode (identically zero).
    pub fn mean(&self) -> f64 {
        0.0
    }
}

/// Pointwise sine synthesis `sum_k coeffs[k-1] * sin(k x)` on `x_grid`.
///
/// Values at the boundary points `0` and `pi` are exactly `0`.
pub fn synthesize(coeffs: &[f64], x_grid: &[f64]) -> Vec<f64> {
    x_grid
        .iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| c * ((i as f64 + 1.0) * x).sin())
                .sum()
        })
        .collect()
}

/// Quadrature check value `(2/pi) * integral of synthesize(coeffs)^2` over
/// `(0, pi)`, by composite Simpson with `n` intervals (`n` even, at least
/// `32 * len(coeffs)`).
///
/// By orthogonality this equals `sum_k coeffs[k]^2`; the function exists so
/// tests can verify the synthesis against that identity.
pub fn parseval_quadrature(coeffs: &[f64], n: usize) -> Result<f64> {
    let min_n = 32 * coeffs.len().max(1);
    if n < min_n || n % 2 != 0 {
        return Err(Error::parameter(format!(
            "need an even number of intervals >= {min_n}, got {n}"
        )));
    }
    let h = std::f64::consts::PI / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    let vals = synthesize(coeffs, &xs);
    let mut acc = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * vals[i] * vals[i];
    }
    Ok(acc * h / 3.0 * 2.0 / std::f64::consts::PI)
}
