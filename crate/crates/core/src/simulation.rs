//! Fixed-step RK4 integration of the coupled network, the blended dynamics
//! and the reference system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, LaplacianDecomposition};
use crate::linalg::norm;
use crate::model::{CouplingGains, Network, NetworkState, Regressor};
use crate::transforms::{self, ParamCoords, SyncCoords, XiCoord};

/// Stiffness limit `dt <= 0.5 / (k lambda_N)`; infinite when uncoupled.
pub fn stiffness_limit(k: f64, lambda_n: f64) -> f64 {
    if k > 0.0 && lambda_n > 0.0 {
        0.5 / (k * lambda_n)
    } else {
        f64::INFINITY
    }
}

/// Integration settings. The method is always classical RK4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_true")]
    pub stiffness_guard: bool,
    /// Record every `record_every`-th step (the final step is always kept).
    #[serde(default = "default_one")]
    pub record_every: usize,
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            stiffness_guard: true,
            record_every: 1,
        }
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride.max(1);
        self
    }

    pub fn without_guard(mut self) -> Self {
        self.stiffness_guard = false;
        self
    }

    pub fn validate(&self, k: f64, lambda_n: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(vec![format!("dt must be positive, got {}", self.dt)]));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(vec![format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )]));
        }
        let limit = stiffness_limit(k, lambda_n);
        if self.stiffness_guard && self.dt > limit {
            return Err(Error::StiffnessGuard { dt: self.dt, limit });
        }
        Ok(())
    }

    /// Number of steps and the (possibly shortened) step that lands on `t_end`.
    pub fn grid(&self, span: f64) -> (usize, f64) {
        if span <= 0.0 {
            return (0, self.dt);
        }
        let steps = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (steps, span / steps as f64)
    }
}

/// Reusable RK4 workspace.
#[derive(Debug, Default, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `y` in place from `t` to `t + dt`.
    #[allow(clippy::needless_range_loop)]
    pub fn step<F>(&mut self, mut f: F, t: f64, y: &mut [f64], dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let len = y.len();
        if self.k1.len() != len {
            *self = Self::new(len);
        }
        let half = 0.5 * dt;
        let blowup = || Error::NumericalBlowup { t, partial: None };

        f(t, y, &mut self.k1);
        if !all_finite(&self.k1) {
            return Err(blowup());
        }
        for i in 0..len {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        f(t + half, &self.tmp, &mut self.k2);
        if !all_finite(&self.k2) {
            return Err(blowup());
        }
        for i in 0..len {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        f(t + half, &self.tmp, &mut self.k3);
        if !all_finite(&self.k3) {
            return Err(blowup());
        }
        for i in 0..len {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        if !all_finite(&self.k4) {
            return Err(blowup());
        }
        for i in 0..len {
            y[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        if !all_finite(y) {
            return Err(blowup());
        }
        Ok(())
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// One classical RK4 step of `y' = f(t, y)`.
pub fn rk4_step<F>(f: F, y: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(Error::Config(vec![format!("dt must be positive, got {dt}")]));
    }
    let mut out = y.to_vec();
    Rk4::new(y.len()).step(f, t, &mut out, dt)?;
    Ok(out)
}

/// Quantities derived from one recorded network state.
#[derive(Debug, Clone)]
pub struct Derived {
    pub sync: SyncCoords,
    pub params: ParamCoords,
    /// Undefined (None) when `k = 0`.
    pub xi: Option<XiCoord>,
    /// `max_i ||x_i - s||`.
    pub sync_err: f64,
    /// `max_i ||theta_i - vartheta_o||`.
    pub param_err: f64,
}

impl Derived {
    pub fn compute(
        model: &dyn Regressor,
        dec: &LaplacianDecomposition,
        k: f64,
        state: &NetworkState,
        blended: &[f64],
    ) -> Result<Self> {
        let (n, p) = (state.state_dim, state.param_dim);
        let sync = transforms::to_sync_coords(dec, &state.x, n)?;
        let params = transforms::to_param_coords(dec, &state.theta, p)?;
        let xi = if k > 0.0 {
            let psi = model.psi(&sync.chi_o, state.t);
            Some(transforms::xi_of(
                dec,
                &sync.chi_tilde,
                &params.vartheta_tilde,
                &psi,
                k,
            )?)
        } else {
            None
        };
        let sync_err = (0..state.n_agents)
            .map(|i| {
                let d: Vec<f64> = state.x_block(i).iter().zip(blended).map(|(a, b)| a - b).collect();
                norm(&d)
            })
            .fold(0.0, f64::max);
        let param_err = (0..state.n_agents)
            .map(|i| {
                let d: Vec<f64> = state
                    .theta_block(i)
                    .iter()
                    .zip(&params.vartheta_o)
                    .map(|(a, b)| a - b)
                    .collect();
                norm(&d)
            })
            .fold(0.0, f64::max);
        Ok(Self {
            sync,
            params,
            xi,
            sync_err,
            param_err,
        })
    }
}

/// Recorded solution of the coupled network.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n_agents: usize,
    pub state_dim: usize,
    pub param_dim: usize,
    pub gains: CouplingGains,
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    /// Blended trajectory `s(t)`, driven by the live mean parameter.
    pub blended: Vec<Vec<f64>>,
    pub derived: Vec<Derived>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(&NetworkState, &Derived)> {
        self.states.last().zip(self.derived.last())
    }

    /// Indices with `t >= t_start`.
    pub fn indices_from(&self, t_start: f64) -> impl Iterator<Item = usize> + '_ {
        self.times
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t >= t_start)
            .map(|(i, _)| i)
    }
}

/// Integrates the network and, alongside it, the blended dynamics
/// `s' = psi(s,t) vartheta_o(t) + psi_o(s,t)` from `s(0) = chi_o(0)`.
pub fn simulate(
    model: &dyn Regressor,
    graph: &Graph,
    initial: &NetworkState,
    gains: CouplingGains,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let dec = graph.decompose()?;
    simulate_with(model, graph, &dec, initial, gains, cfg)
}

/// [`simulate`] with a precomputed decomposition.
pub fn simulate_with(
    model: &dyn Regressor,
    graph: &Graph,
    dec: &LaplacianDecomposition,
    initial: &NetworkState,
    gains: CouplingGains,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let (n, p) = (model.state_dim(), model.param_dim());
    if initial.n_agents != graph.n_agents() || initial.state_dim != n || initial.param_dim != p {
        return Err(Error::shape(format!(
            "initial state ({} agents, n={}, p={}) does not match model/graph ({} agents, n={n}, p={p})",
            initial.n_agents,
            initial.state_dim,
            initial.param_dim,
            graph.n_agents()
        )));
    }
    if !initial.is_finite() {
        return Err(Error::NumericalBlowup {
            t: initial.t,
            partial: None,
        });
    }
    cfg.validate(gains.k, dec.lambda_n())?;

    let net = Network::new(model, graph, gains);
    let big_n = graph.n_agents();
    let split_x = big_n * n;
    let split_th = split_x + big_n * p;

    let s0 = transforms::to_sync_coords(dec, &initial.x, n)?.chi_o;
    let mut y = [initial.x.as_slice(), initial.theta.as_slice(), s0.as_slice()].concat();

    let mut psi_buf = vec![0.0; n * p];
    let mut psi_o_buf = vec![0.0; n];
    let mut mean_theta = vec![0.0; p];
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        net.rhs_into(t, &y[..split_th], &mut dy[..split_th]);
        mean_theta.fill(0.0);
        for i in 0..big_n {
            for c in 0..p {
                mean_theta[c] += y[split_x + i * p + c];
            }
        }
        mean_theta.iter_mut().for_each(|m| *m /= big_n as f64);
        let s = &y[split_th..];
        model.psi_into(s, t, &mut psi_buf);
        model.psi_o_into(s, t, &mut psi_o_buf);
        for r in 0..n {
            let mut acc = psi_o_buf[r];
            for c in 0..p {
                acc += psi_buf[r * p + c] * mean_theta[c];
            }
            dy[split_th + r] = acc;
        }
    };

    let (steps, h) = cfg.grid(cfg.t_end);
    let stride = cfg.record_every.max(1);
    let capacity = steps / stride + 2;
    let mut traj = Trajectory {
        n_agents: big_n,
        state_dim: n,
        param_dim: p,
        gains,
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        blended: Vec::with_capacity(capacity),
        derived: Vec::with_capacity(capacity),
    };

    let record = |traj: &mut Trajectory, t: f64, y: &[f64]| -> Result<()> {
        let state = NetworkState {
            t,
            n_agents: big_n,
            state_dim: n,
            param_dim: p,
            x: y[..split_x].to_vec(),
            theta: y[split_x..split_th].to_vec(),
        };
        let blended = y[split_th..].to_vec();
        let derived = Derived::compute(model, dec, gains.k, &state, &blended)?;
        traj.times.push(t);
        traj.states.push(state);
        traj.blended.push(blended);
        traj.derived.push(derived);
        Ok(())
    };

    record(&mut traj, initial.t, &y)?;
    let mut rk = Rk4::new(y.len());
    for step in 0..steps {
        let t = initial.t + step as f64 * h;
        if let Err(Error::NumericalBlowup { .. }) = rk.step(&mut rhs, t, &mut y, h) {
            return Err(Error::NumericalBlowup {
                t,
                partial: Some(Box::new(traj)),
            });
        }
        if (step + 1) % stride == 0 || step + 1 == steps {
            record(&mut traj, initial.t + (step + 1) as f64 * h, &y)?;
        }
    }
    Ok(traj)
}

/// A sampled vector-valued signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Piecewise-linear interpolation, clamped at the ends.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let times = &self.times;
        if t <= times[0] {
            return self.values[0].clone();
        }
        if t >= *times.last().unwrap() {
            return self.values.last().unwrap().clone();
        }
        let hi = times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        let w = (t - times[lo]) / (times[hi] - times[lo]);
        self.values[lo]
            .iter()
            .zip(&self.values[hi])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Parameter input for the blended dynamics.
#[derive(Debug, Clone)]
pub enum ThetaSource {
    /// Fixed mean parameter.
    Constant(Vec<f64>),
    /// Recorded mean parameter, linearly interpolated between samples.
    Recorded(Series),
}

impl ThetaSource {
    fn at(&self, t: f64) -> Vec<f64> {
        match self {
            ThetaSource::Constant(v) => v.clone(),
            ThetaSource::Recorded(s) => s.interpolate(t),
        }
    }
}

fn integrate_node(
    model: &dyn Regressor,
    theta: &ThetaSource,
    s0: &[f64],
    t0: f64,
    cfg: &IntegratorConfig,
) -> Result<Series> {
    let (n, p) = (model.state_dim(), model.param_dim());
    if s0.len() != n {
        return Err(Error::shape(format!(
            "initial condition has {} entries, model n = {n}",
            s0.len()
        )));
    }
    let (steps, h) = cfg.grid(cfg.t_end - t0);
    let mut psi = vec![0.0; n * p];
    let mut psi_o = vec![0.0; n];
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let th = theta.at(t);
        model.psi_into(y, t, &mut psi);
        model.psi_o_into(y, t, &mut psi_o);
        for r in 0..n {
            dy[r] = psi_o[r] + (0..p).map(|c| psi[r * p + c] * th[c]).sum::<f64>();
        }
    };
    if let ThetaSource::Constant(v) = theta {
        if v.len() != p {
            return Err(Error::shape(format!(
                "parameter has {} entries, model p = {p}",
                v.len()
            )));
        }
    }
    let stride = cfg.record_every.max(1);
    let mut out = Series::default();
    let mut y = s0.to_vec();
    out.times.push(t0);
    out.values.push(y.clone());
    let mut rk = Rk4::new(n);
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        rk.step(&mut rhs, t, &mut y, h)
            .map_err(|_| Error::NumericalBlowup { t, partial: None })?;
        if (step + 1) % stride == 0 || step + 1 == steps {
            out.times.push(t0 + (step + 1) as f64 * h);
            out.values.push(y.clone());
        }
    }
    Ok(out)
}

/// Blended dynamics `s' = psi(s,t) vartheta_o(t) + psi_o(s,t)` on `[0, t_end]`.
///
/// With a recorded parameter series the stage values between samples are
/// linearly interpolated, so accuracy is limited to second order unless the
/// series is sampled more finely than `dt`.
pub fn blended_trajectory(
    model: &dyn Regressor,
    theta: &ThetaSource,
    s0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Series> {
    integrate_node(model, theta, s0, 0.0, cfg)
}

/// Reference system `s' = psi(s,t) theta_star (+ psi_o)` on `[0, t_end]`.
pub fn reference_trajectory(
    model: &dyn Regressor,
    theta_star: &[f64],
    s0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Series> {
    integrate_node(model, &ThetaSource::Constant(theta_star.to_vec()), s0, 0.0, cfg)
}

/// Reference trajectory with slopes, evaluable at any time by cubic Hermite
/// interpolation (fourth-order accurate between grid points).
#[derive(Debug, Clone)]
pub struct DenseReference {
    pub series: Series,
    slopes: Vec<Vec<f64>>,
}

impl DenseReference {
    pub fn new(model: &dyn Regressor, theta_star: &[f64], s0: &[f64], t_end: f64, dt: f64) -> Result<Self> {
        let series = reference_trajectory(model, theta_star, s0, &IntegratorConfig::new(dt, t_end))?;
        let n = model.state_dim();
        let p = model.param_dim();
        let mut psi = vec![0.0; n * p];
        let mut psi_o = vec![0.0; n];
        let slopes = series
            .times
            .iter()
            .zip(&series.values)
            .map(|(&t, s)| {
                model.psi_into(s, t, &mut psi);
                model.psi_o_into(s, t, &mut psi_o);
                (0..n)
                    .map(|r| psi_o[r] + (0..p).map(|c| psi[r * p + c] * theta_star[c]).sum::<f64>())
                    .collect()
            })
            .collect();
        Ok(Self { series, slopes })
    }

    pub fn t_end(&self) -> f64 {
        *self.series.times.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let times = &self.series.times;
        let last = times.len() - 1;
        let hi = times.partition_point(|&s| s <= t).clamp(1, last.max(1));
        let lo = hi - 1;
        if last == 0 {
            return self.series.values[0].clone();
        }
        let h = times[hi] - times[lo];
        let u = ((t - times[lo]) / h).clamp(0.0, 1.0);
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let (a, b) = (&self.series.values[lo], &self.series.values[hi]);
        let (da, db) = (&self.slopes[lo], &self.slopes[hi]);
        (0..a.len())
            .map(|r| h00 * a[r] + h10 * h * da[r] + h01 * b[r] + h11 * h * db[r])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarLinearSine;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn rk4_examples() {
        let decay = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let y = rk4_step(decay, &[1.0], 0.0, 0.1).unwrap();
        assert_relative_eq!(y[0], 0.9048375, epsilon = 5e-8);
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);

        let still = |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0;
        assert_eq!(rk4_step(still, &[3.5], 0.0, 0.1).unwrap(), vec![3.5]);

        let ramp = |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0;
        assert_eq!(rk4_step(ramp, &[0.0], 0.0, 0.25).unwrap(), vec![0.25]);
    }

    #[test]
    fn rk4_reports_blowup() {
        let bad = |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = f64::NAN;
        assert!(matches!(
            rk4_step(bad, &[0.0], 0.0, 0.1),
            Err(Error::NumericalBlowup { .. })
        ));
    }

    #[test]
    fn grid_lands_on_t_end() {
        let cfg = IntegratorConfig::new(0.3, 1.0);
        let (steps, h) = cfg.grid(1.0);
        assert_eq!(steps, 4);
        assert_relative_eq!(h * steps as f64, 1.0);
        assert_eq!(IntegratorConfig::new(0.25, 1.0).grid(1.0).0, 4);
    }

    #[test]
    fn stiffness_guard() {
        let cfg = IntegratorConfig::new(0.003, 1.0);
        assert!(cfg.validate(50.0, 3.0).is_ok()); // limit 1/300
        let err = IntegratorConfig::new(0.004, 1.0).validate(50.0, 3.0).unwrap_err();
        assert!(matches!(err, Error::StiffnessGuard { .. }));
        assert!(IntegratorConfig::new(0.004, 1.0)
            .without_guard()
            .validate(50.0, 3.0)
            .is_ok());
    }

    fn blended_closed_form(t: f64) -> f64 {
        (t.sin() - t.cos() + (-t).exp()) / 2.0
    }

    #[test]
    fn blended_constant_parameter() {
        let cfg = IntegratorConfig::new(1e-3, PI);
        let s = blended_trajectory(&ScalarLinearSine, &ThetaSource::Constant(vec![1.0, 1.0]), &[0.0], &cfg).unwrap();
        let end = s.values.last().unwrap()[0];
        assert_relative_eq!(end, blended_closed_form(PI), epsilon = 1e-10);
        assert_relative_eq!(end, 0.5216, epsilon = 1e-4);
    }

    #[test]
    fn reference_examples() {
        let cfg = IntegratorConfig::new(1e-3, 5.0);
        let s = reference_trajectory(&ScalarLinearSine, &[1.0, 1.0], &[0.0], &cfg).unwrap();
        for (t, v) in s.times.iter().zip(&s.values).step_by(500) {
            assert_relative_eq!(v[0], blended_closed_form(*t), epsilon = 1e-10);
        }
        let s = reference_trajectory(&ScalarLinearSine, &[0.7, 0.0], &[2.0], &cfg).unwrap();
        assert_relative_eq!(s.values.last().unwrap()[0], 2.0 * (-3.5f64).exp(), epsilon = 1e-10);

        let a = reference_trajectory(&ScalarLinearSine, &[1.0, 0.5], &[0.0], &cfg).unwrap();
        let b = reference_trajectory(&ScalarLinearSine, &[1.0, 0.5], &[1.0], &cfg).unwrap();
        for ((t, va), vb) in a.times.iter().zip(&a.values).zip(&b.values) {
            assert_relative_eq!(vb[0] - va[0], (-t).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_regressor_keeps_blended_constant() {
        let zero = crate::model::FnRegressor::new("zero", 1, 3, |_x, _t, out| out.fill(0.0));
        let cfg = IntegratorConfig::new(0.1, 2.0);
        let s = blended_trajectory(&zero, &ThetaSource::Constant(vec![1.0, 2.0, 3.0]), &[0.42], &cfg).unwrap();
        assert!(s.values.iter().all(|v| v[0] == 0.42));
    }

    #[test]
    fn recorded_parameter_matches_constant_when_flat() {
        let cfg = IntegratorConfig::new(0.01, 3.0);
        let rec = Series {
            times: vec![0.0, 1.5, 3.0],
            values: vec![vec![1.0, 1.0]; 3],
        };
        let a = blended_trajectory(&ScalarLinearSine, &ThetaSource::Recorded(rec), &[0.2], &cfg).unwrap();
        let b = blended_trajectory(&ScalarLinearSine, &ThetaSource::Constant(vec![1.0, 1.0]), &[0.2], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dense_reference_interpolates() {
        let dense = DenseReference::new(&ScalarLinearSine, &[1.0, 1.0], &[0.0], 6.0, 0.05).unwrap();
        for k in 0..100 {
            let t = 0.0371 * k as f64;
            assert_relative_eq!(dense.eval(t)[0], blended_closed_form(t), epsilon = 1e-7);
        }
    }

    #[test]
    fn uncoupled_agents_follow_closed_form() {
        let graph = Graph::ring(3).unwrap();
        let thetas = [(0.5, 1.0), (1.0, -0.4), (2.0, 0.7)];
        let x0 = [1.0, -0.5, 0.25];
        let theta: Vec<f64> = thetas.iter().flat_map(|&(a, b)| [a, b]).collect();
        let init = NetworkState::new(0.0, 1, 2, x0.to_vec(), theta).unwrap();
        let cfg = IntegratorConfig::new(0.01, 10.0);
        let traj = simulate(
            &ScalarLinearSine,
            &graph,
            &init,
            CouplingGains::new(0.0, 0.0).unwrap(),
            &cfg,
        )
        .unwrap();
        // x' = -a x + b sin t
        let exact = |a: f64, b: f64, x0: f64, t: f64| {
            let c = b / (1.0 + a * a);
            c * (a * t.sin() - t.cos()) + (x0 + c) * (-a * t).exp()
        };
        for (state, &t) in traj.states.iter().zip(&traj.times) {
            for (i, &(a, b)) in thetas.iter().enumerate() {
                assert!((state.x[i] - exact(a, b, x0[i], t)).abs() < 1e-6);
            }
        }
        assert!(traj.derived.iter().all(|d| d.xi.is_none()));
    }

    #[test]
    fn homogeneous_consensus_is_invariant() {
        let graph = Graph::ring(4).unwrap();
        let init = NetworkState::new(0.0, 1, 2, vec![0.3; 4], [1.2, 0.9].repeat(4)).unwrap();
        let traj = simulate(
            &ScalarLinearSine,
            &graph,
            &init,
            CouplingGains::tied(20.0).unwrap(),
            &IntegratorConfig::new(0.005, 10.0).record_every(50),
        )
        .unwrap();
        for s in &traj.states {
            for i in 1..4 {
                assert!((s.x[i] - s.x[0]).abs() < 1e-10);
                assert!((s.theta_block(i)[0] - s.theta[0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn blowup_returns_partial_trajectory() {
        let explode = crate::model::FnRegressor::new("explode", 1, 1, |x, _t, out| out[0] = x[0] * x[0]);
        let graph = Graph::new(1, &[]).unwrap();
        let init = NetworkState::new(0.0, 1, 1, vec![1.0], vec![1.0]).unwrap();
        let err = simulate(
            &explode,
            &graph,
            &init,
            CouplingGains::new(0.0, 0.0).unwrap(),
            &IntegratorConfig::new(0.01, 5.0),
        )
        .unwrap_err();
        match err {
            Error::NumericalBlowup { t, partial: Some(p) } => {
                assert!(t < 1.1 && t > 0.5);
                assert!(!p.is_empty());
                assert!(p.states.iter().all(NetworkState::is_finite));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
