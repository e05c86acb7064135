use serde::Serialize;

use super::config::Thresholds;
use super::table::Table;
use crate::analysis::fit::{fit_exp_rate_from, ExpFit};
use crate::linalg::norm;

/// Fraction of the horizon used for steady-state metrics.
pub const TAIL_FRACTION: f64 = 0.2;

/// One pass/fail comparison. `margin` is positive when the check passes.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub margin: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value,
            threshold,
            margin: threshold - value,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value >= threshold,
            value,
            threshold,
            margin: value - threshold,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        let margin = (value - lo).min(hi - value);
        Self {
            name: name.into(),
            pass: margin >= 0.0,
            value,
            threshold: if value < lo { lo } else { hi },
            margin,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub t_end: f64,
    pub samples: usize,
    pub tail_start: f64,
    /// `max_i |x_i(T) - s(T)|`.
    pub final_sync_err: f64,
    /// `max_i |theta_i(T) - vartheta_o(T)|`.
    pub final_param_err: f64,
    /// `max_i |x_i(T) - chi_o(T)|`.
    pub final_disagreement: f64,
    pub tail_sync_err: f64,
    pub tail_param_err: f64,
    pub tail_disagreement: f64,
    /// Largest max-minus-min of any `theta_i` component over the tail.
    pub theta_tail_variation: f64,
    /// `sup_t |vartheta_o(t) - vartheta_o(0)|`.
    pub drift: f64,
    /// Exponential fit of `|vartheta~(t)|`.
    pub param_rate: Option<ExpFit>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Log-linear fit of a decaying signal after the first 10% of the horizon,
/// restricted to samples above `1e-10` so the round-off floor is excluded.
pub fn decay_fit(times: &[f64], values: &[f64]) -> Option<ExpFit> {
    let t_end = *times.last()?;
    let (t, v): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .take_while(|(_, &v)| v > 1e-10)
        .filter(|(&t, _)| t >= 0.1 * t_end)
        .map(|(&t, &v)| (t, v))
        .unzip();
    if t.len() < 10 {
        return None;
    }
    fit_exp_rate_from(&t, &v).ok()
}

impl RunReport {
    /// Everything is derived from the table, so the report can be rebuilt
    /// from a persisted CSV.
    pub fn compute(name: &str, table: &Table, limits: &Thresholds) -> Self {
        let len = table.len();
        let last = len - 1;
        let t_end = table.times[last];
        let tail_start = t_end * (1.0 - TAIL_FRACTION);
        let tail: Vec<usize> = (0..len).filter(|&j| table.times[j] >= tail_start).collect();
        let sup = |f: &dyn Fn(usize) -> f64| tail.iter().map(|&j| f(j)).fold(0.0, f64::max);

        let p = table.param_dim;
        let mut theta_tail_variation = 0.0f64;
        for c in 0..table.n_agents * p {
            let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                (lo.min(table.theta[j][c]), hi.max(table.theta[j][c]))
            });
            theta_tail_variation = theta_tail_variation.max(hi - lo);
        }
        let v0 = &table.vartheta_o[0];
        let drift = table
            .vartheta_o
            .iter()
            .map(|v| norm(&v.iter().zip(v0).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .fold(0.0, f64::max);

        let mut report = Self {
            name: name.to_string(),
            t_end,
            samples: len,
            tail_start,
            final_sync_err: table.sync_err[last],
            final_param_err: table.param_err[last],
            final_disagreement: table.disagreement(last),
            tail_sync_err: sup(&|j| table.sync_err[j]),
            tail_param_err: sup(&|j| table.param_err[j]),
            tail_disagreement: sup(&|j| table.disagreement(j)),
            theta_tail_variation,
            drift,
            param_rate: decay_fit(&table.times, &table.norm_vartheta_tilde),
            checks: Vec::new(),
            pass: true,
        };
        let mut checks = Vec::new();
        if let Some(l) = limits.sync_err {
            checks.push(Check::at_most("final sync error", report.final_sync_err, l));
        }
        if let Some(l) = limits.param_err {
            checks.push(Check::at_most(
                "final parameter disagreement",
                report.final_param_err,
                l,
            ));
        }
        if let Some(l) = limits.theta_settle {
            checks.push(Check::at_most(
                "parameter tail variation",
                report.theta_tail_variation,
                l,
            ));
        }
        if let Some(l) = limits.drift {
            checks.push(Check::at_most("mean-parameter drift", report.drift, l));
        }
        if let Some(l) = limits.disagreement_max {
            checks.push(Check::at_most("tail disagreement", report.tail_disagreement, l));
        }
        if let Some(l) = limits.disagreement_min {
            checks.push(Check::at_least("tail disagreement", report.tail_disagreement, l));
        }
        report.pass = checks.iter().all(|c| c.pass);
        report.checks = checks;
        report
    }

    pub fn all_finite(&self) -> bool {
        [
            self.final_sync_err,
            self.final_param_err,
            self.final_disagreement,
            self.tail_sync_err,
            self.tail_param_err,
            self.tail_disagreement,
            self.theta_tail_variation,
            self.drift,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_margins() {
        let c = Check::at_most("a", 1.0, 2.0);
        assert!(c.pass && c.margin == 1.0);
        let c = Check::at_least("b", 1.0, 2.0);
        assert!(!c.pass && c.margin == -1.0);
        let c = Check::within("c", 2.0, 1.6, 2.4);
        assert!(c.pass && (c.margin - 0.4).abs() < 1e-12);
        assert!(!Check::within("d", 2.5, 1.6, 2.4).pass);
    }

    #[test]
    fn fit_skips_floor() {
        let t: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| (-0.5 * t).exp().max(1e-14)).collect();
        let fit = decay_fit(&t, &v).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-9);
    }
}
