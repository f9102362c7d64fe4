//! Interacting-particle form of the filter.
//!
//! A cloud of `N` particles `(U_i, F_i)` carries the posterior: gains are
//! formed from the empirical covariance (normalized by `1 / (N - 1)`) and
//! every particle is corrected with the deterministic-transport innovation
//! `dI_i = (U_i + mean_U) h / 2 - dY`, so no observation noise is ever
//! re-sampled. Time stepping is Euler-Maruyama with fresh i.i.d. model
//! noise per particle.
//!
//! Reproducibility: each particle owns a counter-based noise stream keyed
//! by `(seed, k, particle index)`, so results do not depend on how the
//! per-particle loop is scheduled. All moment reductions use a fixed
//! pairwise summation order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{
    domain::{ENSEMBLE_INIT, PARTICLE_W},
    stream,
};
use crate::simulator::ModeTruthPath;
use crate::spectral_model::{sigma0_f, ModelConfig};
use crate::trace::{EnsembleRow, EnsembleTrace};

/// Particle cloud for one mode.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub k: u32,
    /// State coordinates, one per particle.
    pub u: Vec<f64>,
    /// Drift coordinates, one per particle.
    pub f: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
}

/// Empirical first and second moments of a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleMoments {
    pub mean_u: f64,
    pub mean_f: f64,
    pub var_u: f64,
    pub cov_uf: f64,
    pub var_f: f64,
}

/// Sums a slice in a fixed balanced-tree order, independent of thread
/// scheduling and stable across runs.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

impl Ensemble {
    /// Number of particles.
    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// Empirical moments with `1 / (N - 1)` normalization.
    pub fn moments(&self) -> EnsembleMoments {
        let n = self.n();
        let mean_u = pairwise_sum(&self.u) / n as f64;
        let mean_f = pairwise_sum(&self.f) / n as f64;
        let du: Vec<f64> = self.u.iter().map(|&x| x - mean_u).collect();
        let df: Vec<f64> = self.f.iter().map(|&x| x - mean_f).collect();
        let uu: Vec<f64> = du.iter().map(|&x| x * x).collect();
        let ff: Vec<f64> = df.iter().map(|&x| x * x).collect();
        let uf: Vec<f64> = du.iter().zip(&df).map(|(&a, &b)| a * b).collect();
        let denom = (n - 1) as f64;
        EnsembleMoments {
            mean_u,
            mean_f,
            var_u: pairwise_sum(&uu) / denom,
            cov_uf: pairwise_sum(&uf) / denom,
            var_f: pairwise_sum(&ff) / denom,
        }
    }
}

/// Draws the initial cloud: all states at zero, drifts i.i.d. centered
/// Gaussian with the prior variance `k^(-2 alpha - 1)`.
///
/// Drift draws come from one stream in particle order, so a smaller
/// ensemble is a prefix of a larger one at the same seed.
pub fn init_ensemble(n: usize, k: u32, alpha: f64, seed: u64) -> Result<Ensemble> {
    if n < 2 {
        return Err(Error::parameter(format!("ensemble needs at least 2 particles, got {n}")));
    }
    if k == 0 {
        return Err(Error::parameter("mode index k must be at least 1"));
    }
    if !(alpha > 0.0) {
        return Err(Error::parameter(format!("alpha must be positive, got {alpha}")));
    }
    let sd = sigma0_f(k, alpha).sqrt();
    let mut init = stream(seed, ENSEMBLE_INIT, k, 0);
    let f = (0..n).map(|_| sd * init.sample::<f64, _>(StandardNormal)).collect();
    let rngs = (0..n).map(|i| stream(seed, PARTICLE_W, k, i as u64)).collect();
    Ok(Ensemble { k, u: vec![0.0; n], f, rngs })
}

/// Advances every particle by one Euler-Maruyama step against the
/// observation increment `d_y`.
///
/// Gains are the empirical ones; with a degenerate cloud they vanish and
/// the step is the plain forward dynamics. Returns the pre-step moments
/// that the gains were built from.
pub fn step_ensemble(
    e: &mut Ensemble,
    d_y: f64,
    h: f64,
    gamma: f64,
    rho: f64,
) -> EnsembleMoments {
    let m = e.moments();
    let k_u = m.var_u / rho;
    let k_f = m.cov_uf / rho;
    let a = f64::from(e.k) * f64::from(e.k);
    let noise = (gamma * h).sqrt();
    let mean_u = m.mean_u;
    e.u.par_iter_mut()
        .zip(e.f.par_iter_mut())
        .zip(e.rngs.par_iter_mut())
        .with_min_len(4096)
        .for_each(|((u, f), rng)| {
            let innovation = 0.5 * (*u + mean_u) * h - d_y;
            let xi: f64 = rng.sample(StandardNormal);
            *u += (-a * *u + *f) * h + noise * xi - k_u * innovation;
            *f -= k_f * innovation;
        });
    m
}

/// Runs the particle filter along an observation path, recording empirical
/// moments at the path grid points closest to each requested output time.
pub fn run_ensemble(
    k: u32,
    path: &ModeTruthPath,
    config: &ModelConfig,
    n_particles: usize,
    out_times: &[f64],
) -> Result<EnsembleTrace> {
    config.validate()?;
    if path.k != k {
        return Err(Error::parameter(format!(
            "path is for mode {} but ensemble asked for mode {k}",
            path.k
        )));
    }
    if path.t.len() < 2 || path.dy.len() + 1 != path.t.len() {
        return Err(Error::parameter("observation path must have one increment per step"));
    }
    if out_times.is_empty() || out_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::parameter("output times must be nonempty and strictly increasing"));
    }
    let t_end = *path.t.last().unwrap();
    if out_times[0] < path.t[0] || *out_times.last().unwrap() > t_end + 1e-12 * t_end.max(1.0) {
        return Err(Error::parameter("output times must lie within the path span"));
    }
    // Map each output time to the nearest grid index.
    let mut marks = vec![false; path.t.len()];
    for &tt in out_times {
        let i = match path.t.binary_search_by(|x| x.partial_cmp(&tt).unwrap()) {
            Ok(i) => i,
            Err(i) => {
                if i == 0 {
                    0
                } else if i >= path.t.len() || (tt - path.t[i - 1]) < (path.t[i] - tt) {
                    i - 1
                } else {
                    i
                }
            }
        };
        marks[i] = true;
    }

    let mut cloud = init_ensemble(n_particles, k, config.alpha, config.seed)?;
    let mut trace = EnsembleTrace::default();
    let record = |trace: &mut EnsembleTrace, t: f64, m: &EnsembleMoments, n: usize| {
        trace.rows.push(EnsembleRow {
            k,
            t,
            n,
            mean_u: m.mean_u,
            mean_f: m.mean_f,
            var_u: m.var_u,
            cov_uf: m.cov_uf,
            var_f: m.var_f,
        });
    };
    if marks[0] {
        let m = cloud.moments();
        record(&mut trace, path.t[0], &m, n_particles);
    }
    for i in 0..path.dy.len() {
        let h = path.t[i + 1] - path.t[i];
        if !(h > 0.0) {
            return Err(Error::parameter("observation grid must be strictly increasing"));
        }
        step_ensemble(&mut cloud, path.dy[i], h, config.gamma, config.rho);
        if marks[i + 1] {
            let m = cloud.moments();
            record(&mut trace, path.t[i + 1], &m, n_particles);
        }
        if !cloud.u.iter().take(1).all(|v| v.is_finite()) {
            return Err(Error::Instability {
                k,
                t: path.t[i + 1],
                detail: "particle state became non-finite".into(),
            });
        }
    }
    Ok(trace)
}
