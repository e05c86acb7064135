use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    /// Decay rate (negated slope of `ln y`).
    pub rate: f64,
    /// Intercept of `ln y` at `t = 0`.
    pub intercept: f64,
}

/// Least-squares fit of `ln y = intercept - rate * t` over the last
/// `tail_fraction` of the samples.
pub fn fit_exp_rate(times: &[f64], values: &[f64], tail_fraction: f64) -> Result<ExpFit> {
    if times.len() != values.len() {
        return Err(Error::shape("times and values differ in length"));
    }
    let start = times.len() - ((times.len() as f64 * tail_fraction.clamp(0.0, 1.0)).round() as usize).min(times.len());
    fit_exp_rate_from(&times[start..], &values[start..])
}

/// Least-squares fit of `ln y` against `t` over all given samples.
pub fn fit_exp_rate_from(times: &[f64], values: &[f64]) -> Result<ExpFit> {
    if times.len() < 2 {
        return Err(Error::shape("need at least two samples to fit a rate"));
    }
    if let Some((t, y)) = times.iter().zip(values).find(|(_, &y)| !(y > 0.0)) {
        return Err(Error::FitDomain(*y, *t));
    }
    let m = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / m;
    let l_mean = values.iter().map(|y| y.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in times.iter().zip(values) {
        let dt = t - t_mean;
        sxy += dt * (y.ln() - l_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    Ok(ExpFit {
        rate: -slope,
        intercept: l_mean - slope * t_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_exponential() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 5.0 * (-0.3 * t).exp()).collect();
        let fit = fit_exp_rate(&t, &y, 0.5).unwrap();
        assert_relative_eq!(fit.rate, 0.3, epsilon = 1e-9);
        assert_relative_eq!(fit.intercept, 5f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn constant_has_zero_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = fit_exp_rate(&t, &vec![2.0; 50], 1.0).unwrap();
        assert!(fit.rate.abs() < 1e-14);
    }

    #[test]
    fn perturbed_exponential() {
        let t: Vec<f64> = (0..5000).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|t| (-0.3 * t).exp() * (1.0 + 0.01 * (10.0 * t).sin()))
            .collect();
        let fit = fit_exp_rate(&t, &y, 1.0).unwrap();
        assert!((fit.rate - 0.3).abs() < 0.01);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(matches!(
            fit_exp_rate(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.5], 1.0),
            Err(Error::FitDomain(..))
        ));
    }
}
