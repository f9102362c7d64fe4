//! Reduced models for the covariance flow.
//!
//! For large `k` the state variances relax on the fast time scale
//! `epsilon = k^(-2)` while the drift variance moves slowly, so the fast
//! pair `x = (sigma_u, sigma_uf)` can be replaced by its quasi-equilibrium
//! given the slow variable `y = sigma_f`. Writing the fast flow as
//! `x' = -A x / epsilon + f(x, y)` with `A = diag(2, 1)` and
//! `f = (2 sigma_uf + gamma - sigma_u^2 / rho, y - sigma_u sigma_uf / rho)`,
//! the first-order manifold is `x = epsilon A^{-1} f(0, y)`, i.e.
//! `sigma_u = epsilon gamma / 2` and `sigma_uf = epsilon y`; the
//! second-order refinement re-evaluates `f` on the first-order point and
//! subtracts a term proportional to the slow velocity `dy/dt`.
//!
//! For small `k` the state variance instead settles at a level `C0`
//! independent of the drift variance, and the cross covariance tracks
//! `C1 sigma_f` with `C1 = (1 + C0 / rho)^(-1)`.

use crate::trace::{ModeTrace, TraceRow, Variant};

/// Modes at or above this index are treated as safely inside the reduced
/// (large-`k`) regime by default; callers may override.
pub const DEFAULT_K_STAR: u32 = 4;

/// Reduced drift-only model state at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    /// Reduced posterior drift variance.
    pub sigma_f_red: f64,
    /// Reduced data-averaged drift mean.
    pub m_f_red: f64,
    /// Scale separation parameter `k^(-2)`.
    pub epsilon: f64,
    /// Reduced gain: `epsilon^2 sigma_f / rho` in the large-`k` regime,
    /// `C1^2 sigma_f / rho` in the small-`k` regime.
    pub kappa: f64,
}

impl ReducedState {
    /// Reduced state in the large-`k` regime (quasi-equilibrated fast
    /// variables), where the drift estimation matches the stationary
    /// problem exactly.
    pub fn large_k(t: f64, k: u32, alpha: f64, rho: f64, f_star: f64) -> ReducedState {
        let epsilon = 1.0 / (f64::from(k) * f64::from(k));
        let sigma_f_red = reduced_sigma_f(t, k, alpha, rho);
        ReducedState {
            sigma_f_red,
            m_f_red: reduced_bias(t, k, alpha, rho, f_star),
            epsilon,
            kappa: epsilon * epsilon * sigma_f_red / rho,
        }
    }

    /// Reduced state in the small-`k` regime, where the effective gain
    /// carries `C1^2` instead of `epsilon^2`.
    pub fn small_k(t: f64, k: u32, alpha: f64, gamma: f64, rho: f64, f_star: f64) -> ReducedState {
        let epsilon = 1.0 / (f64::from(k) * f64::from(k));
        let c1 = small_k_constants(gamma, rho).c1;
        let s0 = crate::spectral_model::sigma0_f(k, alpha);
        let sigma_f_red = rho * s0 / (c1 * c1 * s0 * t + rho);
        ReducedState {
            sigma_f_red,
            m_f_red: f_star * (1.0 - sigma_f_red / s0),
            epsilon,
            kappa: c1 * c1 * sigma_f_red / rho,
        }
    }
}

/// Stationary levels of the state variance and the cross-covariance ratio
/// in the small-`k` regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallKConstants {
    /// Equilibrium state variance: positive root of
    /// `2 C0 - gamma + C0^2 / rho = 0`.
    pub c0: f64,
    /// Cross-covariance ratio `C1 = (1 + C0 / rho)^(-1)`.
    pub c1: f64,
}

/// Solves the equilibrium quadratic for `C0` and derives `C1`.
///
/// Requires `gamma >= 0` and `rho > 0`.
pub fn small_k_constants(gamma: f64, rho: f64) -> SmallKConstants {
    let c0 = -rho + (rho * rho + rho * gamma).sqrt();
    SmallKConstants { c0, c1: 1.0 / (1.0 + c0 / rho) }
}

/// Reduced posterior drift variance
/// `rho s0 / (epsilon^2 s0 t + rho)`; algebraically identical to the
/// stationary closed form.
pub fn reduced_sigma_f(t: f64, k: u32, alpha: f64, rho: f64) -> f64 {
    let s0 = crate::spectral_model::sigma0_f(k, alpha);
    let eps2 = 1.0 / f64::from(k).powi(4);
    rho * s0 / (eps2 * s0 * t + rho)
}

/// Reduced data-averaged drift mean `(1 - sigma_f / s0) f_star`.
pub fn reduced_bias(t: f64, k: u32, alpha: f64, rho: f64, f_star: f64) -> f64 {
    let s0 = crate::spectral_model::sigma0_f(k, alpha);
    f_star * (1.0 - reduced_sigma_f(t, k, alpha, rho) / s0)
}

/// First-order slow-manifold point of the fast covariance pair given the
/// slow drift variance `sigma_f`.
pub fn slow_manifold_covariance(sigma_f: f64, k: u32, gamma: f64) -> (f64, f64) {
    let eps = 1.0 / (f64::from(k) * f64::from(k));
    (eps * gamma / 2.0, eps * sigma_f)
}

/// Identifies the fast-slow decomposition of the covariance flow; `gamma`
/// and `rho` fix the nonlinear part `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSystem {
    pub gamma: f64,
    pub rho: f64,
}

/// Second-order slow-manifold point of `(sigma_u, sigma_uf)` given the
/// slow variable `y = sigma_f` and its velocity `dy_dt`.
///
/// Expanding `epsilon A^{-1} f(x1, y) - epsilon^2 A^{-2} (df/dy) dy_dt`
/// with the first-order point `x1 = (epsilon gamma / 2, epsilon y)`:
///
/// ```text
/// sigma_u  = (epsilon / 2) (2 epsilon y + gamma - epsilon^2 gamma^2 / (4 rho))
/// sigma_uf = epsilon (y - epsilon^2 gamma y / (2 rho)) - epsilon^2 dy_dt
/// ```
///
/// The approximation error against the full covariance flow drops from
/// O(epsilon^2) to O(epsilon^3).
pub fn slow_manifold_second_order(
    y: f64,
    dy_dt: f64,
    k: u32,
    system: &CovarianceSystem,
) -> (f64, f64) {
    let eps = 1.0 / (f64::from(k) * f64::from(k));
    let (gamma, rho) = (system.gamma, system.rho);
    let sigma_u = 0.5 * eps * (2.0 * eps * y + gamma - eps * eps * gamma * gamma / (4.0 * rho));
    let sigma_uf = eps * (y - eps * eps * gamma * y / (2.0 * rho)) - eps * eps * dy_dt;
    (sigma_u, sigma_uf)
}

/// Evaluates the reduced model on a grid as a per-mode trace, with the
/// fast covariance columns filled from the first-order manifold.
pub fn reduced_trace(
    k: u32,
    gamma: f64,
    rho: f64,
    alpha: f64,
    f_star: f64,
    out_times: &[f64],
) -> ModeTrace {
    let rows = out_times
        .iter()
        .map(|&t| {
            let sf = reduced_sigma_f(t, k, alpha, rho);
            let (su, suf) = slow_manifold_covariance(sf, k, gamma);
            TraceRow {
                t,
                fbar: Some(reduced_bias(t, k, alpha, rho, f_star)),
                sigma_u: Some(su),
                sigma_uf: Some(suf),
                sigma_f: sf,
                k_u: Some(su / rho),
                k_f: Some(suf / rho),
                ..TraceRow::default()
            }
        })
        .collect();
    ModeTrace { variant: Variant::Reduced, k, rows }
}
