//! Linearly parameterized node dynamics and the coupled network vector field
//!
//! ```text
//! x_i' = psi(x_i, t) theta_i + psi_o(x_i, t) + u_i,   u_i = k * sum_{j in N_i} (x_j - x_i)
//! theta_i' = g * psi(x_i, t)^T u_i
//! ```
//!
//! The regressor `psi` and the common drift `psi_o` are shared by all
//! agents; heterogeneity lives only in the parameters `theta_i`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// A regressor `psi: R^n x R -> R^{n x p}` plus optional metadata used by
/// the analysis module.
///
/// Implementations must be pure: the simulator and the certificate sweeps
/// call them from several threads.
pub trait Regressor: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Writes `psi(x, t)` into `out` in row-major order (`n * p` entries).
    fn psi_into(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Writes `psi_o(x, t)` into `out`. Defaults to zero.
    fn psi_o_into(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    /// Whether diffusive coupling acts on state component `component`.
    fn is_coupled(&self, _component: usize) -> bool {
        true
    }

    /// Analytic `d psi / d x_j` for each state component `j`.
    fn d_psi_dx(&self, _x: &[f64], _t: f64) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// Analytic `d psi / d t`.
    fn d_psi_dt(&self, _x: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    /// A continuous `rho` with `max(|psi|, |d psi/ds|, |d psi/dt|) <= rho(|s|)`.
    fn rho(&self, _norm_s: f64) -> Option<f64> {
        None
    }

    /// Period of the explicit time dependence, if any.
    fn period(&self) -> Option<f64> {
        None
    }

    fn psi(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let (n, p) = (self.state_dim(), self.param_dim());
        let mut buf = vec![0.0; n * p];
        self.psi_into(x, t, &mut buf);
        DMatrix::from_row_slice(n, p, &buf)
    }

    fn psi_o(&self, x: &[f64], t: f64) -> DVector<f64> {
        let mut buf = vec![0.0; self.state_dim()];
        self.psi_o_into(x, t, &mut buf);
        DVector::from_vec(buf)
    }
}

/// Central-difference step used when analytic derivatives are absent.
pub fn fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (1e-6 * norm).max(1e-6)
}

/// `d psi / d x_j` for every `j`, analytic when the model provides it and by
/// central differences otherwise.
pub fn psi_partials_x(model: &dyn Regressor, x: &[f64], t: f64) -> Vec<DMatrix<f64>> {
    if let Some(d) = model.d_psi_dx(x, t) {
        return d;
    }
    fd_partials_x(model, x, t)
}

/// Central-difference `d psi / d x_j`, ignoring any analytic derivative.
pub fn fd_partials_x(model: &dyn Regressor, x: &[f64], t: f64) -> Vec<DMatrix<f64>> {
    let h = fd_step(x);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let plus = model.psi(&probe, t);
            probe[j] = x[j] - h;
            let minus = model.psi(&probe, t);
            probe[j] = x[j];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `d psi / d t`, analytic or central difference.
pub fn psi_partial_t(model: &dyn Regressor, x: &[f64], t: f64) -> DMatrix<f64> {
    if let Some(d) = model.d_psi_dt(x, t) {
        return d;
    }
    let h = (1e-6 * t.abs()).max(1e-6);
    (model.psi(x, t + h) - model.psi(x, t - h)) / (2.0 * h)
}

/// Jacobian of the node drift `psi(x,t) theta + psi_o(x,t)` with respect to `x`.
pub fn drift_jacobian(model: &dyn Regressor, x: &[f64], t: f64, theta: &[f64]) -> DMatrix<f64> {
    let n = model.state_dim();
    let th = DVector::from_column_slice(theta);
    let partials = psi_partials_x(model, x, t);
    let h = fd_step(x);
    let mut probe = x.to_vec();
    let mut jac = DMatrix::zeros(n, n);
    for (j, dpsi) in partials.iter().enumerate() {
        probe[j] = x[j] + h;
        let plus = model.psi_o(&probe, t);
        probe[j] = x[j] - h;
        let minus = model.psi_o(&probe, t);
        probe[j] = x[j];
        let col = dpsi * &th + (plus - minus) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// `psi(x, t) = [-x, sin t]`, `n = 1`, `p = 2`.
///
/// With `theta = (alpha, beta)` each agent follows `x' = -alpha x + beta sin t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarLinearSine;

impl Regressor for ScalarLinearSine {
    fn name(&self) -> &str {
        "scalar_linear_sine"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn psi_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        out[0] = -x[0];
        out[1] = t.sin();
    }
    fn d_psi_dx(&self, _x: &[f64], _t: f64) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::from_row_slice(1, 2, &[-1.0, 0.0])])
    }
    fn d_psi_dt(&self, _x: &[f64], t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 2, &[0.0, t.cos()]))
    }
    fn rho(&self, norm_s: f64) -> Option<f64> {
        Some((1.0 + norm_s * norm_s).sqrt())
    }
    fn period(&self) -> Option<f64> {
        Some(2.0 * std::f64::consts::PI)
    }
}

/// Van der Pol oscillator in companion coordinates `z = x`, `y = x + x'`:
///
/// ```text
/// z' = -z + y
/// y' = (1 - mu (z^2 - 1)) (-z + y) - nu z + coupling on y
/// ```
///
/// The agent state is `(z, y)` and only `y` is coupled. The `y` row of `psi`
/// is `[-(z^2 - 1)(-z + y), -z]` with `theta = (mu, nu)`, and `psi_o = -z + y`
/// in both rows. `z` plays the role of the time argument of the scalar
/// `y`-regressor; integrating it jointly is equivalent.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPolCompanion;

impl Regressor for VanDerPolCompanion {
    fn name(&self) -> &str {
        "van_der_pol"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn psi_into(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let (z, y) = (x[0], x[1]);
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = -(z * z - 1.0) * (-z + y);
        out[3] = -z;
    }
    fn psi_o_into(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let v = -x[0] + x[1];
        out[0] = v;
        out[1] = v;
    }
    fn is_coupled(&self, component: usize) -> bool {
        component == 1
    }
    fn d_psi_dx(&self, x: &[f64], _t: f64) -> Option<Vec<DMatrix<f64>>> {
        let (z, y) = (x[0], x[1]);
        // d/dz of -(z^2-1)(y-z) = -2z(y-z) + (z^2-1)
        let dz = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -2.0 * z * (y - z) + (z * z - 1.0), -1.0]);
        let dy = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -(z * z - 1.0), 0.0]);
        Some(vec![dz, dy])
    }
    fn d_psi_dt(&self, _x: &[f64], _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(2, 2))
    }
}

type PsiFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type RhoFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A regressor assembled from closures, for models registered in code.
#[derive(Clone)]
pub struct FnRegressor {
    name: String,
    state_dim: usize,
    param_dim: usize,
    psi: Arc<PsiFn>,
    psi_o: Option<Arc<PsiFn>>,
    rho: Option<Arc<RhoFn>>,
}

impl FnRegressor {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        param_dim: usize,
        psi: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            state_dim,
            param_dim,
            psi: Arc::new(psi),
            psi_o: None,
            rho: None,
        }
    }

    pub fn with_psi_o(mut self, psi_o: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.psi_o = Some(Arc::new(psi_o));
        self
    }

    pub fn with_rho(mut self, rho: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.rho = Some(Arc::new(rho));
        self
    }
}

impl std::fmt::Debug for FnRegressor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnRegressor")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("param_dim", &self.param_dim)
            .finish_non_exhaustive()
    }
}

impl Regressor for FnRegressor {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn psi_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.psi)(x, t, out)
    }
    fn psi_o_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.psi_o {
            Some(f) => f(x, t, out),
            None => out.fill(0.0),
        }
    }
    fn rho(&self, norm_s: f64) -> Option<f64> {
        self.rho.as_ref().map(|f| f(norm_s))
    }
}

/// Looks up a built-in model by its configuration name.
pub fn builtin(name: &str) -> Option<Arc<dyn Regressor>> {
    match name {
        "scalar_linear_sine" => Some(Arc::new(ScalarLinearSine)),
        "van_der_pol" | "van_der_pol_companion" => Some(Arc::new(VanDerPolCompanion)),
        _ => None,
    }
}

/// Coupling gain `k` and adaptation gain `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingGains {
    pub k: f64,
    pub g: f64,
}

impl CouplingGains {
    /// `k = 0` is accepted so uncoupled baselines can be simulated.
    pub fn new(k: f64, g: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::InvalidGain(format!("coupling gain k = {k}")));
        }
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::InvalidGain(format!("adaptation gain g = {g}")));
        }
        Ok(Self { k, g })
    }

    /// `g = 1/sqrt(k)`.
    pub fn tied(k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::InvalidGain(format!("g = 1/sqrt(k) needs k > 0, got {k}")));
        }
        Self::new(k, 1.0 / k.sqrt())
    }
}

/// Stacked agent states and parameters at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub n_agents: usize,
    pub state_dim: usize,
    pub param_dim: usize,
    /// `col(x_1, ..., x_N)`.
    pub x: Vec<f64>,
    /// `col(theta_1, ..., theta_N)`.
    pub theta: Vec<f64>,
}

impl NetworkState {
    pub fn new(t: f64, state_dim: usize, param_dim: usize, x: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || param_dim == 0 {
            return Err(Error::shape("state and parameter dimensions must be positive"));
        }
        if x.is_empty() || !x.len().is_multiple_of(state_dim) {
            return Err(Error::shape(format!(
                "state vector of length {} is not a multiple of n = {state_dim}",
                x.len()
            )));
        }
        let n_agents = x.len() / state_dim;
        if theta.len() != n_agents * param_dim {
            return Err(Error::shape(format!(
                "expected {} parameters ({n_agents} agents x p = {param_dim}), got {}",
                n_agents * param_dim,
                theta.len()
            )));
        }
        Ok(Self {
            t,
            n_agents,
            state_dim,
            param_dim,
            x,
            theta,
        })
    }

    /// Builds a state from per-agent blocks.
    pub fn from_blocks(t: f64, x: &[Vec<f64>], theta: &[Vec<f64>]) -> Result<Self> {
        let n = x.first().map_or(0, Vec::len);
        let p = theta.first().map_or(0, Vec::len);
        if x.len() != theta.len() {
            return Err(Error::shape(format!(
                "{} state blocks but {} parameter blocks",
                x.len(),
                theta.len()
            )));
        }
        if x.iter().any(|b| b.len() != n) || theta.iter().any(|b| b.len() != p) {
            return Err(Error::shape("ragged agent blocks"));
        }
        Self::new(t, n, p, x.concat(), theta.concat())
    }

    pub fn x_block(&self, i: usize) -> &[f64] {
        &self.x[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn theta_block(&self, i: usize) -> &[f64] {
        &self.theta[i * self.param_dim..(i + 1) * self.param_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.theta).all(|v| v.is_finite())
    }
}

/// Precomputed view of model + graph + gains used by the integrator.
pub struct Network<'a> {
    model: &'a dyn Regressor,
    neighbors: Vec<Vec<usize>>,
    coupled: Vec<bool>,
    gains: CouplingGains,
}

impl<'a> Network<'a> {
    pub fn new(model: &'a dyn Regressor, graph: &Graph, gains: CouplingGains) -> Self {
        Self {
            model,
            neighbors: graph.neighbors(),
            coupled: (0..model.state_dim()).map(|c| model.is_coupled(c)).collect(),
            gains,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn model(&self) -> &dyn Regressor {
        self.model
    }

    pub fn gains(&self) -> CouplingGains {
        self.gains
    }

    /// Length of the flat `[x, theta]` vector.
    pub fn flat_len(&self) -> usize {
        self.n_agents() * (self.model.state_dim() + self.model.param_dim())
    }

    /// `u_i = k sum_j (x_j - x_i)` on coupled components; zero elsewhere.
    pub fn coupling_into(&self, x: &[f64], u: &mut [f64]) {
        let n = self.model.state_dim();
        let k = self.gains.k;
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for c in 0..n {
                let xi = x[i * n + c];
                let mut acc = 0.0;
                if self.coupled[c] {
                    for &j in nbrs {
                        acc += x[j * n + c] - xi;
                    }
                }
                u[i * n + c] = k * acc;
            }
        }
    }

    /// Evaluates `[x', theta']` for the flat vector `y = [x, theta]`.
    /// `dy` must have the same length as `y`.
    pub fn rhs_into(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.state_dim();
        let p = self.model.param_dim();
        let big_n = self.n_agents();
        let (x, theta) = y.split_at(big_n * n);
        let (dx, dtheta) = dy[..big_n * (n + p)].split_at_mut(big_n * n);

        self.coupling_into(x, dx);
        let mut psi = vec![0.0; n * p];
        let mut psi_o = vec![0.0; n];
        let g = self.gains.g;
        for i in 0..big_n {
            let xi = &x[i * n..(i + 1) * n];
            let th = &theta[i * p..(i + 1) * p];
            self.model.psi_into(xi, t, &mut psi);
            self.model.psi_o_into(xi, t, &mut psi_o);
            for c in 0..p {
                // theta_i' = g psi^T u_i, using u_i before the drift is added
                let mut acc = 0.0;
                for r in 0..n {
                    acc += psi[r * p + c] * dx[i * n + r];
                }
                dtheta[i * p + c] = g * acc;
            }
            for r in 0..n {
                let mut acc = psi_o[r];
                for c in 0..p {
                    acc += psi[r * p + c] * th[c];
                }
                dx[i * n + r] += acc;
            }
        }
    }
}

fn check_state(model: &dyn Regressor, graph: &Graph, s: &NetworkState) -> Result<()> {
    if s.n_agents != graph.n_agents() {
        return Err(Error::shape(format!(
            "state has {} agents, graph has {}",
            s.n_agents,
            graph.n_agents()
        )));
    }
    if s.state_dim != model.state_dim() || s.param_dim != model.param_dim() {
        return Err(Error::shape(format!(
            "state blocks are (n={}, p={}), model expects (n={}, p={})",
            s.state_dim,
            s.param_dim,
            model.state_dim(),
            model.param_dim()
        )));
    }
    Ok(())
}

/// `u_i = k sum_{j in N_i} (x_j - x_i)` for all agents, every component coupled.
pub fn coupling_input(graph: &Graph, x: &[f64], state_dim: usize, k: f64) -> Result<Vec<f64>> {
    if state_dim == 0 || x.len() != graph.n_agents() * state_dim {
        return Err(Error::shape(format!(
            "expected {} x {state_dim} state entries, got {}",
            graph.n_agents(),
            x.len()
        )));
    }
    let mut u = vec![0.0; x.len()];
    for (i, nbrs) in graph.neighbors().iter().enumerate() {
        for c in 0..state_dim {
            let xi = x[i * state_dim + c];
            let acc: f64 = nbrs.iter().map(|&j| x[j * state_dim + c] - xi).sum();
            u[i * state_dim + c] = k * acc;
        }
    }
    Ok(u)
}

/// `[x', theta']` as a state with the same layout as `s`.
pub fn network_rhs(
    model: &dyn Regressor,
    graph: &Graph,
    s: &NetworkState,
    gains: CouplingGains,
) -> Result<NetworkState> {
    check_state(model, graph, s)?;
    let net = Network::new(model, graph, gains);
    let y = [s.x.as_slice(), s.theta.as_slice()].concat();
    let mut dy = vec![0.0; y.len()];
    net.rhs_into(s.t, &y, &mut dy);
    let theta = dy.split_off(s.x.len());
    Ok(NetworkState {
        t: s.t,
        n_agents: s.n_agents,
        state_dim: s.state_dim,
        param_dim: s.param_dim,
        x: dy,
        theta,
    })
}

/// `x_i' = psi(x_i,t) theta_i + psi_o(x_i,t) + u_i`, stacked.
pub fn state_rhs(model: &dyn Regressor, graph: &Graph, s: &NetworkState, gains: CouplingGains) -> Result<Vec<f64>> {
    network_rhs(model, graph, s, gains).map(|d| d.x)
}

/// `theta_i' = g psi(x_i,t)^T u_i`, stacked.
pub fn param_rhs(model: &dyn Regressor, graph: &Graph, s: &NetworkState, gains: CouplingGains) -> Result<Vec<f64>> {
    network_rhs(model, graph, s, gains).map(|d| d.theta)
}
