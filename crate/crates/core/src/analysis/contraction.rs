//! Sampled contraction margin with the identity metric.

use serde::Serialize;

use crate::linalg::sym_eig_range;
use crate::model::{drift_jacobian, Regressor};

#[derive(Debug, Clone, Serialize)]
pub struct ContractionEstimate {
    /// `-max sym(J)` over the sampled grid; positive iff contractive there.
    pub c: f64,
    pub contractive: bool,
    pub theta_samples: usize,
    pub state_points: usize,
    pub time_points: usize,
    /// Where the margin is attained: `(theta, state, t)`.
    pub worst: (Vec<f64>, Vec<f64>, f64),
}

/// `c = -max_{theta, s, t} lambda_max(sym(d f / d s))` with
/// `f = psi(s,t) theta + psi_o(s,t)`. For scalar states this is
/// `-max (d psi/d s) theta`.
pub fn contraction_margin(
    model: &dyn Regressor,
    theta_samples: &[Vec<f64>],
    state_grid: &[Vec<f64>],
    t_grid: &[f64],
) -> ContractionEstimate {
    let mut worst_val = f64::NEG_INFINITY;
    let mut worst = (Vec::new(), Vec::new(), 0.0);
    for theta in theta_samples {
        for s in state_grid {
            for &t in t_grid {
                let jac = drift_jacobian(model, s, t, theta);
                let (_, hi) = sym_eig_range(&jac);
                if hi > worst_val {
                    worst_val = hi;
                    worst = (theta.clone(), s.clone(), t);
                }
            }
        }
    }
    let c = -worst_val;
    ContractionEstimate {
        c,
        contractive: c > 0.0,
        theta_samples: theta_samples.len(),
        state_points: state_grid.len(),
        time_points: t_grid.len(),
        worst,
    }
}

/// Uniform grid on `[-radius, radius]^n`: 201 points when `n = 1`,
/// 21 per axis otherwise.
pub fn state_grid(radius: f64, n: usize) -> Vec<Vec<f64>> {
    let per_axis = if n == 1 { 201 } else { 21 };
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64)
        .collect();
    let mut grid = vec![Vec::new()];
    for _ in 0..n {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    grid
}

/// `count` equally spaced times on `[0, period)`.
pub fn time_grid(period: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| period * i as f64 / count as f64).collect()
}

/// The samples plus the corners of their bounding box, deduplicated.
pub fn with_box_corners(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let p = first.len();
    let lo: Vec<f64> = (0..p)
        .map(|c| samples.iter().map(|s| s[c]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..p)
        .map(|c| samples.iter().map(|s| s[c]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut out = samples.to_vec();
    for mask in 0..(1usize << p) {
        let corner: Vec<f64> = (0..p).map(|c| if mask >> c & 1 == 1 { hi[c] } else { lo[c] }).collect();
        if !out.contains(&corner) {
            out.push(corner);
        }
    }
    out
}
