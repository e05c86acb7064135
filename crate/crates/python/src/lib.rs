//! Python bindings for `vfc-core`.
//!
//! Vectors cross the boundary as lists of floats; matrices as lists of rows.
//! Reports are returned as plain dicts.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;
use vfc_core::analysis::{fit, ltv, pe};
use vfc_core::experiments::{self, criteria, Table};
use vfc_core::model::builtin;
use vfc_core::simulation::IntegratorConfig;
use vfc_core::transforms::{self, ParamCoords, SyncCoords};
use vfc_core::CouplingGains;

create_exception!(vfc, VfcError, PyException, "Error raised by the vfc core library.");

fn err(e: vfc_core::Error) -> PyErr {
    VfcError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_dict<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| VfcError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(VfcError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Undirected communication graph.
#[pyclass(name = "Graph", module = "vfc", frozen)]
struct PyGraph(vfc_core::Graph);

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n_agents: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        vfc_core::Graph::new(n_agents, &edges).map(Self).map_err(err)
    }

    #[staticmethod]
    fn ring(n_agents: usize) -> PyResult<Self> {
        vfc_core::Graph::ring(n_agents).map(Self).map_err(err)
    }

    #[staticmethod]
    fn path(n_agents: usize) -> PyResult<Self> {
        vfc_core::Graph::path(n_agents).map(Self).map_err(err)
    }

    #[staticmethod]
    fn complete(n_agents: usize) -> PyResult<Self> {
        vfc_core::Graph::complete(n_agents).map(Self).map_err(err)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges().to_vec()
    }

    fn is_connected(&self) -> bool {
        self.0.is_connected()
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&self.0.laplacian())
    }

    /// `L = R diag(lambda) R^T` with `R^T 1 = 0`.
    fn decompose(&self) -> PyResult<PyDecomposition> {
        self.0.decompose().map(PyDecomposition).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Graph(n_agents={}, edges={:?})", self.0.n_agents(), self.0.edges())
    }
}

/// Spectral decomposition of a connected graph's Laplacian, with the
/// consensus/disagreement coordinate changes built on it.
#[pyclass(name = "Decomposition", module = "vfc", frozen)]
struct PyDecomposition(vfc_core::LaplacianDecomposition);

// Method names mirror the Rust free functions.
#[allow(clippy::wrong_self_convention)]
#[pymethods]
impl PyDecomposition {
    #[getter]
    fn r_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.0.r_matrix)
    }

    /// Nonzero Laplacian eigenvalues, ascending.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.0.lambda.iter().copied().collect()
    }

    #[getter]
    fn lambda2(&self) -> f64 {
        self.0.lambda2()
    }

    #[getter]
    fn lambda_n(&self) -> f64 {
        self.0.lambda_n()
    }

    /// Stacked states to `(chi_o, chi_tilde)`.
    fn to_sync_coords(&self, x: Vec<f64>, state_dim: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let c = transforms::to_sync_coords(&self.0, &x, state_dim).map_err(err)?;
        Ok((c.chi_o, c.chi_tilde))
    }

    fn from_sync_coords(&self, chi_o: Vec<f64>, chi_tilde: Vec<f64>) -> PyResult<Vec<f64>> {
        transforms::from_sync_coords(&self.0, &SyncCoords { chi_o, chi_tilde }).map_err(err)
    }

    /// Stacked parameters to `(vartheta_o, vartheta_tilde)`.
    fn to_param_coords(&self, theta: Vec<f64>, param_dim: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let c = transforms::to_param_coords(&self.0, &theta, param_dim).map_err(err)?;
        Ok((c.vartheta_o, c.vartheta_tilde))
    }

    fn from_param_coords(&self, vartheta_o: Vec<f64>, vartheta_tilde: Vec<f64>) -> PyResult<Vec<f64>> {
        transforms::from_param_coords(
            &self.0,
            &ParamCoords {
                vartheta_o,
                vartheta_tilde,
            },
        )
        .map_err(err)
    }

    /// `xi = chi~ - (1/k) (Lambda^-1 (x) psi) vartheta~` for a given `psi(chi_o, t)`.
    fn xi(&self, chi_tilde: Vec<f64>, vartheta_tilde: Vec<f64>, psi: Vec<Vec<f64>>, k: f64) -> PyResult<Vec<f64>> {
        let psi = matrix(&psi)?;
        transforms::xi_of(&self.0, &chi_tilde, &vartheta_tilde, &psi, k)
            .map(|c| c.xi)
            .map_err(err)
    }
}

/// Recorded samples of a network run.
#[pyclass(name = "Trajectory", module = "vfc", frozen)]
struct PyTrajectory(Table);

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    /// Stacked agent states, one row per sample.
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.0.x.clone()
    }

    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        self.0.theta.clone()
    }

    #[getter]
    fn chi_o(&self) -> Vec<Vec<f64>> {
        self.0.chi_o.clone()
    }

    #[getter]
    fn vartheta_o(&self) -> Vec<Vec<f64>> {
        self.0.vartheta_o.clone()
    }

    #[getter]
    fn norm_chi_tilde(&self) -> Vec<f64> {
        self.0.norm_chi_tilde.clone()
    }

    #[getter]
    fn norm_vartheta_tilde(&self) -> Vec<f64> {
        self.0.norm_vartheta_tilde.clone()
    }

    /// `None` entries when `k = 0`.
    #[getter]
    fn norm_xi(&self) -> Vec<Option<f64>> {
        self.0.norm_xi.clone()
    }

    /// Blended reference state `s`.
    #[getter]
    fn s(&self) -> Vec<Vec<f64>> {
        self.0.s.clone()
    }

    #[getter]
    fn sync_err(&self) -> Vec<f64> {
        self.0.sync_err.clone()
    }

    #[getter]
    fn param_err(&self) -> Vec<f64> {
        self.0.param_err.clone()
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.write_csv(&path).map_err(err)
    }
}

/// Integrates a network of `model` agents ("scalar_linear_sine" or
/// "van_der_pol") with RK4. `g` defaults to `1/sqrt(k)`.
#[pyfunction]
#[pyo3(signature = (model, graph, x0, theta0, k, dt, t_end, g=None, record_every=1))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    model: &str,
    graph: &PyGraph,
    x0: Vec<Vec<f64>>,
    theta0: Vec<Vec<f64>>,
    k: f64,
    dt: f64,
    t_end: f64,
    g: Option<f64>,
    record_every: usize,
) -> PyResult<PyTrajectory> {
    let m = builtin(model).ok_or_else(|| VfcError::new_err(format!("unknown model {model:?}")))?;
    let gains = match g {
        Some(g) => CouplingGains::new(k, g),
        None => CouplingGains::tied(k),
    }
    .map_err(err)?;
    let state = vfc_core::NetworkState::from_blocks(0.0, &x0, &theta0).map_err(err)?;
    let cfg = IntegratorConfig::new(dt, t_end).record_every(record_every);
    let traj = vfc_core::simulate(m.as_ref(), &graph.0, &state, gains, &cfg).map_err(err)?;
    Ok(PyTrajectory(Table::from_trajectory(&traj)))
}

/// Runs a preset name or scenario file, writing its outputs under `out_dir`.
/// Returns the trajectory and the run report.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: Option<PathBuf>,
) -> PyResult<(PyTrajectory, Bound<'py, PyAny>)> {
    let cfg = experiments::load_config(config).map_err(err)?;
    let (traj, report) = match out_dir {
        Some(dir) => experiments::run_scenario(&cfg, &dir).map(|(t, r, _)| (t, r)),
        None => experiments::run(&cfg),
    }
    .map_err(err)?;
    Ok((PyTrajectory(Table::from_trajectory(&traj)), to_dict(py, &report)?))
}

/// Certificate report for a preset name or scenario file.
#[pyfunction]
fn analyze<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = experiments::load_config(config).map_err(err)?;
    let report = experiments::analyze(&cfg).map_err(err)?;
    to_dict(py, &report)
}

/// Decay constants of `theta' = -g psi^T psi theta` from PE data.
#[pyfunction]
#[pyo3(signature = (c1, c2, tau, m_psi, c=1.0, l_psi=0.0, m_x=1.0))]
#[allow(clippy::too_many_arguments)]
fn decay_bounds<'py>(
    py: Python<'py>,
    c1: f64,
    c2: f64,
    tau: f64,
    m_psi: f64,
    c: f64,
    l_psi: f64,
    m_x: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let d = ltv::decay_bounds(c1, c2, tau, m_psi, c, l_psi, m_x).map_err(err)?;
    to_dict(py, &d)
}

/// Extreme eigenvalues of the sliding Gram integral of sampled regressors
/// (`series[i]` is `psi` at `t0 + i dt`, given as rows).
#[pyfunction]
#[pyo3(signature = (series, dt, tau, t0=0.0))]
fn pe_gram<'py>(
    py: Python<'py>,
    series: Vec<Vec<Vec<f64>>>,
    dt: f64,
    tau: f64,
    t0: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mats = series.iter().map(|m| matrix(m)).collect::<PyResult<Vec<_>>>()?;
    let est = pe::pe_gram(&mats, t0, dt, tau).map_err(err)?;
    to_dict(py, &est)
}

/// Least-squares `log v = intercept - rate t` over the trailing
/// `tail_fraction` of the samples. Returns `(rate, intercept)`.
#[pyfunction]
#[pyo3(signature = (times, values, tail_fraction=0.5))]
fn fit_exp_rate(times: Vec<f64>, values: Vec<f64>, tail_fraction: f64) -> PyResult<(f64, f64)> {
    let f = fit::fit_exp_rate(&times, &values, tail_fraction).map_err(err)?;
    Ok((f.rate, f.intercept))
}

/// Runs one acceptance criterion (1..=14).
#[pyfunction]
#[pyo3(signature = (id, quick=false, seed=None))]
fn run_criterion<'py>(py: Python<'py>, id: usize, quick: bool, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    if !(1..=criteria::COUNT).contains(&id) {
        return Err(VfcError::new_err(format!(
            "criterion id must be in 1..={}",
            criteria::COUNT
        )));
    }
    let ctx = criteria::Context::new(criteria::ReproOptions {
        quick,
        seed,
        out_dir: None,
    });
    let r = py.detach(|| criteria::run_criterion(id, &ctx));
    let d = to_dict(py, &r)?;
    d.set_item("margin", r.margin())?;
    Ok(d)
}

#[pymodule]
fn vfc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VfcError", m.py().get_type::<VfcError>())?;
    m.add("PRESETS", experiments::PRESETS.to_vec())?;
    m.add("CRITERIA", criteria::NAMES.to_vec())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyDecomposition>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(decay_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(pe_gram, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exp_rate, m)?)?;
    m.add_function(wrap_pyfunction!(run_criterion, m)?)?;
    Ok(())
}
