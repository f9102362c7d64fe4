//! Time grids and per-mode step/horizon rules.

use crate::error::{Error, Result};

/// Default number of output points per decade for logarithmic grids.
pub const POINTS_PER_DECADE: usize = 50;

/// Default smallest positive output time for logarithmic grids.
pub const LOG_T_MIN: f64 = 1e-3;

/// Builds a logarithmically spaced output grid on `[t_min, t_end]` with
/// roughly `per_decade` points per decade, prepending `t = 0`.
///
/// Every quantity of interest decays like a power of `t`, so uniform output
/// grids waste points at late times. The first and last points are exactly
/// `0` and `t_end`.
pub fn log_grid(t_min: f64, t_end: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_end > t_min) {
        return Err(Error::parameter(format!(
            "log grid needs 0 < t_min < t_end, got [{t_min}, {t_end}]"
        )));
    }
    if per_decade == 0 {
        return Err(Error::parameter("per_decade must be >= 1"));
    }
    let decades = (t_end / t_min).log10();
    let n = (decades * per_decade as f64).ceil() as usize + 1;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let log_min = t_min.ln();
    let log_max = t_end.ln();
    for i in 0..n {
        let frac = i as f64 / (n - 1) as f64;
        out.push((log_min + frac * (log_max - log_min)).exp());
    }
    // Pin the endpoints exactly despite rounding in exp/ln.
    out[1] = t_min;
    *out.last_mut().unwrap() = t_end;
    Ok(out)
}

/// Builds a uniform grid `0, h, 2h, ..., t_end` (last point exactly `t_end`).
pub fn uniform_grid(t_end: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && t_end > 0.0) {
        return Err(Error::parameter(format!(
            "uniform grid needs h > 0 and t_end > 0, got h={h}, t_end={t_end}"
        )));
    }
    let n = (t_end / h).round().max(1.0) as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    *out.last_mut().unwrap() = t_end;
    Ok(out)
}

/// Per-mode time step `h_k = min(dt_base, 0.1 / k^2)`.
///
/// The state of mode `k` contracts at rate `k^2`; resolving that transient
/// explicitly needs `h` a modest fraction of `k^-2`, while small modes are
/// capped by `dt_base`.
pub fn mode_step(dt_base: f64, k: u32) -> f64 {
    dt_base.min(0.1 / f64::from(k * k))
}

/// Per-mode horizon `base * rho * k^(2*alpha+5)`.
///
/// The drift variance of mode `k` halves at `t ~ rho * k^(2*alpha+5)`, so a
/// fixed horizon would leave large modes still in their plateau. Scaling by
/// the half-life proxy puts every mode at the same dynamical age.
pub fn mode_horizon(base: f64, k: u32, alpha: f64, rho: f64) -> f64 {
    base * rho * f64::from(k).powf(2.0 * alpha + 5.0)
}
