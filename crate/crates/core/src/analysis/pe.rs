//! Sliding-window persistent-excitation estimates.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::sym_eig_range;
use crate::model::Regressor;
use crate::simulation::Series;

/// Gram extremes over every sliding window of length `tau`.
#[derive(Debug, Clone, Serialize)]
pub struct PeEstimate {
    pub tau: f64,
    /// Smallest eigenvalue over all windows.
    pub c1: f64,
    /// Largest eigenvalue over all windows.
    pub c2: f64,
    /// Per-window `(start time, min eig, max eig)`.
    #[serde(skip)]
    pub windows: Vec<(f64, f64, f64)>,
}

impl PeEstimate {
    pub fn is_exciting(&self) -> bool {
        self.c1 > 0.0
    }
}

/// Evaluates `psi` along a sampled state trajectory.
pub fn regressor_along(model: &dyn Regressor, series: &Series) -> Vec<DMatrix<f64>> {
    series
        .times
        .iter()
        .zip(&series.values)
        .map(|(&t, s)| model.psi(s, t))
        .collect()
}

/// Trapezoidal Gram integrals `int psi^T psi dt` over every window of
/// length `tau` on a uniform grid with spacing `dt`, starting at `t0`.
pub fn pe_gram(psi_series: &[DMatrix<f64>], t0: f64, dt: f64, tau: f64) -> Result<PeEstimate> {
    if psi_series.is_empty() {
        return Err(Error::shape("empty regressor series"));
    }
    let span = dt * (psi_series.len() - 1) as f64;
    if tau > span * (1.0 + 1e-12) {
        return Err(Error::WindowTooLong { window: tau, span });
    }
    let w = (tau / dt).round() as usize;
    if w < 10 {
        return Err(Error::WindowTooShort(w));
    }

    let p = psi_series[0].ncols();
    let grams: Vec<DMatrix<f64>> = psi_series.iter().map(|m| m.transpose() * m).collect();
    let mut cumulative = Vec::with_capacity(grams.len());
    cumulative.push(DMatrix::<f64>::zeros(p, p));
    for pair in grams.windows(2) {
        let next = cumulative.last().unwrap() + (&pair[0] + &pair[1]) * (0.5 * dt);
        cumulative.push(next);
    }

    let mut windows = Vec::with_capacity(grams.len() - w);
    let (mut c1, mut c2) = (f64::INFINITY, f64::NEG_INFINITY);
    for start in 0..grams.len() - w {
        let gram = &cumulative[start + w] - &cumulative[start];
        let (lo, hi) = sym_eig_range(&gram);
        c1 = c1.min(lo);
        c2 = c2.max(hi);
        windows.push((t0 + start as f64 * dt, lo, hi));
    }
    Ok(PeEstimate {
        tau,
        c1: c1.max(0.0),
        c2,
        windows,
    })
}
