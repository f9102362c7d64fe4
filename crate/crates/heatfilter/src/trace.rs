//! Trace containers and their CSV schemas.
//!
//! Column lists are part of the tool's external contract: the base per-mode
//! schema is `k,t,ubar,fbar,sigma_u,sigma_uf,sigma_f,k_u,k_f`, extended by
//! `mu,m_u,m_f,p_u,p_uf,p_f,V` when data-averaged moments are present.
//! Cells a variant does not define are left empty. Floats are written in
//! Rust's shortest round-trip form, so equal runs produce byte-identical
//! files.

use std::io::Write;

use crate::error::Result;
use crate::simulator::ModeTruthPath;

/// Which model produced a per-mode trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full dynamic filter (mean SDE plus Riccati covariance).
    Dynamic,
    /// Pure-drift (stationary observation) problem.
    Stationary,
    /// Slow-manifold reduced model.
    Reduced,
}

impl Variant {
    /// Lower-case tag used in file names and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dynamic => "dynamic",
            Variant::Stationary => "stationary",
            Variant::Reduced => "reduced",
        }
    }
}

/// One output row of a per-mode trace; optional fields are variant-dependent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Posterior state mean (data-driven runs only).
    pub ubar: Option<f64>,
    /// Posterior drift mean (data-driven runs) or its deterministic mean.
    pub fbar: Option<f64>,
    pub sigma_u: Option<f64>,
    pub sigma_uf: Option<f64>,
    pub sigma_f: f64,
    pub k_u: Option<f64>,
    pub k_f: Option<f64>,
    /// Mean signal `mu_t` of the data-averaged system.
    pub mu: Option<f64>,
    /// Data-averaged posterior state mean.
    pub m_u: Option<f64>,
    /// Data-averaged posterior drift mean.
    pub m_f: Option<f64>,
    /// Frequentist state variance.
    pub p_u: Option<f64>,
    /// Frequentist state-drift covariance.
    pub p_uf: Option<f64>,
    /// Frequentist drift variance.
    pub p_f: Option<f64>,
    /// Lyapunov diagnostic for the covariance gap.
    pub v: Option<f64>,
}

/// Time series of [`TraceRow`] for one mode and one model variant.
#[derive(Debug, Clone)]
pub struct ModeTrace {
    pub variant: Variant,
    pub k: u32,
    pub rows: Vec<TraceRow>,
}

const BASE_HEADER: [&str; 9] = [
    "k", "t", "ubar", "fbar", "sigma_u", "sigma_uf", "sigma_f", "k_u", "k_f",
];
const EXT_HEADER: [&str; 7] = ["mu", "m_u", "m_f", "p_u", "p_uf", "p_f", "V"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ModeTrace {
    /// Whether any row carries data-averaged (extended) columns.
    pub fn is_extended(&self) -> bool {
        self.rows.iter().any(|r| {
            r.mu.is_some()
                || r.m_u.is_some()
                || r.m_f.is_some()
                || r.p_u.is_some()
                || r.p_uf.is_some()
                || r.p_f.is_some()
                || r.v.is_some()
        })
    }

    /// Writes the trace as CSV with the documented header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ext = self.is_extended();
        let mut header: Vec<&str> = BASE_HEADER.to_vec();
        if ext {
            header.extend_from_slice(&EXT_HEADER);
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                self.k.to_string(),
                r.t.to_string(),
                cell(r.ubar),
                cell(r.fbar),
                cell(r.sigma_u),
                cell(r.sigma_uf),
                r.sigma_f.to_string(),
                cell(r.k_u),
                cell(r.k_f),
            ];
            if ext {
                rec.extend([
                    cell(r.mu),
                    cell(r.m_u),
                    cell(r.m_f),
                    cell(r.p_u),
                    cell(r.p_uf),
                    cell(r.p_f),
                    cell(r.v),
                ]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Keeps only the rows closest to each requested output time.
    ///
    /// Used to thin dense integration grids to a logarithmic output grid;
    /// `times` must be increasing and within the trace span.
    pub fn thinned_to(&self, times: &[f64]) -> ModeTrace {
        let mut rows = Vec::with_capacity(times.len());
        let mut j = 0;
        for &tt in times {
            while j + 1 < self.rows.len()
                && (self.rows[j + 1].t - tt).abs() <= (self.rows[j].t - tt).abs()
            {
                j += 1;
            }
            rows.push(self.rows[j]);
        }
        ModeTrace { variant: self.variant, k: self.k, rows }
    }
}

/// One row of an ensemble trace: empirical moments of the particle cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleRow {
    pub k: u32,
    pub t: f64,
    pub n: usize,
    pub mean_u: f64,
    pub mean_f: f64,
    pub var_u: f64,
    pub cov_uf: f64,
    pub var_f: f64,
}

/// Time series of empirical ensemble moments.
#[derive(Debug, Clone, Default)]
pub struct EnsembleTrace {
    pub rows: Vec<EnsembleRow>,
}

impl EnsembleTrace {
    /// Writes the trace as CSV (`k,t,N,mean_u,mean_f,var_u,cov_uf,var_f`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "t", "N", "mean_u", "mean_f", "var_u", "cov_uf", "var_f"])?;
        for r in &self.rows {
            w.write_record(&[
                r.k.to_string(),
                r.t.to_string(),
                r.n.to_string(),
                r.mean_u.to_string(),
                r.mean_f.to_string(),
                r.var_u.to_string(),
                r.cov_uf.to_string(),
                r.var_f.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior contraction summary across modes.
#[derive(Debug, Clone, Default)]
pub struct ContractionTrace {
    /// Output times.
    pub t: Vec<f64>,
    /// Truncated spectral total of `phi_t^2` per output time.
    pub phi_sq_total: Vec<f64>,
    /// Number of modes summed explicitly per output time.
    pub k_used: Vec<u32>,
    /// Analytic bound on the discarded tail per output time.
    pub tail_bound: Vec<f64>,
    /// Log-log slope over the trailing decade, once enough points exist.
    pub slope_running: Vec<Option<f64>>,
    /// Per-mode `phi_t(k)^2` series for the explicitly tracked modes.
    pub per_mode: Vec<(u32, Vec<f64>)>,
}

impl ContractionTrace {
    /// Writes the trace as CSV
    /// (`t,phi_sq_total,K_used,tail_bound,slope_running`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "phi_sq_total", "K_used", "tail_bound", "slope_running"])?;
        for i in 0..self.t.len() {
            w.write_record(&[
                self.t[i].to_string(),
                self.phi_sq_total[i].to_string(),
                self.k_used[i].to_string(),
                self.tail_bound[i].to_string(),
                cell(self.slope_running[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes a simulated path as CSV (`k,t,u,dy`); the `dy` cell on a row is
/// the increment over the step starting at that row's time, empty on the
/// final row.
pub fn write_sim_csv<W: Write>(path: &ModeTruthPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "u", "dy"])?;
    for i in 0..path.t.len() {
        w.write_record(&[
            path.k.to_string(),
            path.t[i].to_string(),
            path.u[i].to_string(),
            path.dy.get(i).map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
