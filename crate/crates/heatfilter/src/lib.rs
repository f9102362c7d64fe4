//! Spectral Kalman-Bucy filtering for a stochastic heat equation whose
//! forcing (drift) is an unknown static function estimated jointly with the
//! state.
//!
//! On the Dirichlet sine basis of `(0, pi)` the problem decouples into
//! independent scalar modes `k = 1, 2, ...`. Each mode carries an
//! Ornstein-Uhlenbeck signal `U_t(k)` with unknown constant forcing `F*(k)`,
//! observed in additive white noise. The crate provides, per mode:
//!
//! - exact simulation of the signal/observation pair ([`simulator`]),
//! - the exact Gaussian filter: mean SDE plus Riccati covariance ODE
//!   ([`filter_core`]),
//! - data-averaged (frequentist) moment equations for bias and estimator
//!   variance, with a Lyapunov diagnostic ([`frequentist`]),
//! - the analytically solvable pure-drift (stationary) problem used as a
//!   closed-form oracle ([`stationary_drift`]),
//! - slow-manifold reductions valid for large `k`, plus the small-`k`
//!   quasi-equilibrium constants ([`slow_manifold`]),
//! - an interacting-particle (ensemble) formulation of the same filter
//!   ([`ensemble`]),
//! - posterior contraction diagnostics across all modes ([`contraction`]).
//!
//! Everything is deterministic given a master seed; random streams are keyed
//! by `(seed, domain, mode, id)` so results do not depend on scheduling or on
//! how many modes are simulated.

pub mod contraction;
pub mod ensemble;
pub mod error;
pub mod filter_core;
pub mod frequentist;
pub mod grid;
pub mod integrator;
pub mod rng;
pub mod simulator;
pub mod slow_manifold;
pub mod spectral_model;
pub mod stationary_drift;
pub mod trace;

pub use error::{Error, Result};
pub use filter_core::{Gains, PosteriorMoments};
pub use frequentist::{DeltaP, FrequentistMoments};
pub use simulator::ModeTruthPath;
pub use slow_manifold::{ReducedState, SmallKConstants};
pub use spectral_model::{DriftTruth, ModelConfig, PriorSpec, TruthMode};
pub use stationary_drift::StationaryState;
pub use trace::{ContractionTrace, EnsembleTrace, ModeTrace, Variant};
