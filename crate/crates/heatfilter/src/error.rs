//! Error type shared by all modules.

/// Crate-wide error type.
///
/// `Parameter` and `FitWindow` indicate a misuse of the API (bad inputs or a
/// window that cannot support the requested statistic); `Instability` and
/// `Truncation` indicate a numerical failure during an otherwise valid run.
/// The CLI maps the former to exit code 2 and the latter to exit code 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The integrator produced a state outside the feasible region (for
    /// example a variance below the `-1e-12` clamp threshold), typically
    /// because the step size is too large for the mode.
    #[error("numerical instability at mode k={k}, t={t}: {detail}")]
    Instability { k: u32, t: f64, detail: String },

    /// The spectral sum could not reach the requested relative tail tolerance
    /// within the allowed number of modes.
    #[error(
        "spectral truncation cannot meet rtol={rtol} within k_cap={k_cap} at t={t} \
         (tail bound {tail_bound:.3e} vs partial sum {partial:.3e})"
    )]
    Truncation {
        rtol: f64,
        k_cap: u32,
        t: f64,
        tail_bound: f64,
        partial: f64,
    },

    /// A slope fit was requested on a window with too few points or too
    /// little dynamic range.
    #[error("fit window too short: {0}")]
    FitWindow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for parameter errors.
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
