//! Scenario files and embedded presets.
//!
//! A scenario is a JSON object. A file may name a `"preset"`; its remaining
//! keys are merge-patched over that preset before validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{builtin, CouplingGains, NetworkState, Regressor};
use crate::simulation::{stiffness_limit, IntegratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Auto,
    Random,
}

/// A number or the keyword `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoF64 {
    Value(f64),
    Keyword(Keyword),
}

/// Explicit per-agent vectors or `"random"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Explicit(Vec<Vec<f64>>),
    Keyword(Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Ring,
    Path,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Family {
        kind: GraphKind,
        n: usize,
    },
    Edges {
        n_agents: usize,
        edges: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub m_x: f64,
    pub m_theta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x: InitSpec,
    pub theta: InitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub k: f64,
    pub g: AutoF64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub dt: AutoF64,
    pub t_end: f64,
    /// Time between recorded samples; every step when absent.
    #[serde(default)]
    pub record_interval: Option<f64>,
    #[serde(default = "yes")]
    pub stiffness_guard: bool,
}

fn yes() -> bool {
    true
}

/// Signal groups for plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotGroup {
    /// One panel per state component, all agents overlaid.
    States,
    /// One panel per parameter component, all agents overlaid.
    Theta,
    /// Error norms on a log scale.
    Errors,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub plot: Option<String>,
    #[serde(default)]
    pub plot_groups: Vec<PlotGroup>,
    /// Run the analysis certificates alongside the simulation.
    #[serde(default)]
    pub analysis: bool,
}

/// Pass/fail limits applied to a run. Absent entries are not checked.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Upper limit on `max_i |x_i(T) - s(T)|`.
    #[serde(default)]
    pub sync_err: Option<f64>,
    /// Upper limit on `max_i |theta_i(T) - vartheta_o(T)|`.
    #[serde(default)]
    pub param_err: Option<f64>,
    /// Upper limit on the tail variation of every `theta_i` component.
    #[serde(default)]
    pub theta_settle: Option<f64>,
    /// Upper limit on `sup_t |vartheta_o(t) - vartheta_o(0)|`.
    #[serde(default)]
    pub drift: Option<f64>,
    /// Upper limit on the tail sup of `max_i |x_i - chi_o|`.
    #[serde(default)]
    pub disagreement_max: Option<f64>,
    /// Lower limit on the tail sup of `max_i |x_i - chi_o|`.
    #[serde(default)]
    pub disagreement_min: Option<f64>,
}

impl Thresholds {
    /// Upper limits multiplied and lower limits divided by `factor`.
    pub fn relaxed(&self, factor: f64) -> Self {
        let up = |v: Option<f64>| v.map(|v| v * factor);
        Self {
            sync_err: up(self.sync_err),
            param_err: up(self.param_err),
            theta_settle: up(self.theta_settle),
            drift: self.drift,
            disagreement_max: up(self.disagreement_max),
            disagreement_min: self.disagreement_min.map(|v| v / factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    /// PE window length.
    pub tau: f64,
    /// Length of the reference runs used for PE estimates.
    pub pe_horizon: f64,
    /// Samples for the `Psi~` bound estimates.
    pub samples: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            tau: 2.0 * std::f64::consts::PI,
            pe_horizon: 16.0 * std::f64::consts::PI,
            samples: 20_000,
        }
    }
}

/// The file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: String,
    pub model: String,
    pub graph: GraphSpec,
    pub bounds: Bounds,
    pub initial: InitialSpec,
    pub gains: GainsSpec,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub outputs: OutputsSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Parameter samples for the certificates; defaults to the initial
    /// parameters.
    #[serde(default)]
    pub theta_star: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub analysis: Option<AnalysisSpec>,
}

/// A validated scenario with every `"auto"` and `"random"` resolved.
#[derive(Clone, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub model_name: String,
    #[serde(skip)]
    pub model: Arc<dyn Regressor>,
    pub graph: Graph,
    pub bounds: Bounds,
    pub x0: Vec<Vec<f64>>,
    pub theta0: Vec<Vec<f64>>,
    pub gains: CouplingGains,
    /// `g` differs from `1/sqrt(k)`.
    pub g_overridden: bool,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub stiffness_guard: bool,
    pub outputs: OutputsSpec,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub theta_star: Vec<Vec<f64>>,
    pub analysis: AnalysisSpec,
}

impl std::fmt::Debug for ScenarioConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioConfig")
            .field("name", &self.name)
            .field("model", &self.model_name)
            .field("gains", &self.gains)
            .field("dt", &self.dt)
            .field("t_end", &self.t_end)
            .finish_non_exhaustive()
    }
}

impl ScenarioConfig {
    pub fn initial_state(&self) -> Result<NetworkState> {
        NetworkState::from_blocks(0.0, &self.x0, &self.theta0)
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let cfg = IntegratorConfig::new(self.dt, self.t_end).record_every(self.record_every);
        if self.stiffness_guard {
            cfg
        } else {
            cfg.without_guard()
        }
    }
}

/// Default seed when a scenario asks for random draws without one.
pub const DEFAULT_SEED: u64 = 0x5eed;

pub const PRESETS: [&str; 4] = ["fig1a", "fig1b", "fig1c", "fig2"];

fn fig1(name: &str, k: f64, g: Value, dt: Value, limits: Value) -> Value {
    json!({
        "name": name,
        "model": "van_der_pol",
        "graph": {"kind": "ring", "n": 3},
        "bounds": {"m_x": 2.0, "m_theta": 2.0, "delta": 0.2},
        "initial": {"x": "random", "theta": [[0.5, 0.8], [1.0, 1.0], [1.5, 1.2]]},
        "gains": {"k": k, "g": g},
        "integrator": {"dt": dt, "t_end": 300.0, "record_interval": 0.05},
        "outputs": {"csv": format!("{name}.csv"), "plot": format!("{name}.svg"), "plot_groups": ["states", "errors"]},
        "seed": 1,
        "thresholds": limits,
    })
}

/// JSON of an embedded preset.
pub fn preset_value(name: &str) -> Option<Value> {
    let v = match name {
        "fig2" => json!({
            "name": "fig2",
            "model": "scalar_linear_sine",
            "graph": {"kind": "ring", "n": 3},
            "bounds": {"m_x": 2.0, "m_theta": 2.0, "delta": 0.2},
            "initial": {"x": "random", "theta": [[1.5, 0.8], [1.0, 1.2], [0.5, 1.0]]},
            "gains": {"k": 50.0, "g": "auto"},
            "integrator": {"dt": "auto", "t_end": 2000.0, "record_interval": 0.1},
            "outputs": {"csv": "fig2.csv", "plot": "fig2.svg", "plot_groups": ["theta"]},
            "seed": 1,
            "thresholds": {"sync_err": 1e-3, "param_err": 1e-3, "theta_settle": 1e-4, "drift": 0.2},
        }),
        "fig1a" => fig1("fig1a", 0.0, json!(0.0), json!(0.01), json!({"disagreement_min": 0.5})),
        "fig1b" => fig1("fig1b", 20.0, json!(0.0), json!("auto"), json!({})),
        "fig1c" => fig1(
            "fig1c",
            20.0,
            json!("auto"),
            json!("auto"),
            json!({"disagreement_max": 1e-2}),
        ),
        _ => return None,
    };
    Some(v)
}

/// Merge-patches `patch` over the preset it names (if any). A `graph`
/// entry replaces the preset graph whole, since the two graph forms do not
/// share keys.
pub fn merge_over_preset(mut patch: Value) -> Result<Value> {
    let preset = patch.as_object_mut().and_then(|o| o.remove("preset"));
    match preset {
        None => Ok(patch),
        Some(Value::String(name)) => {
            let mut base = preset_value(&name).ok_or_else(|| {
                Error::Config(vec![format!("unknown preset {name:?}; known: {}", PRESETS.join(", "))])
            })?;
            if let Some(graph) = patch.get("graph") {
                base["graph"] = graph.clone();
            }
            // Output files follow a renamed scenario unless the patch names them.
            if let Some(new) = patch.get("name").and_then(Value::as_str) {
                for (key, ext) in [("csv", "csv"), ("plot", "svg")] {
                    if base["outputs"][key] == Value::String(format!("{name}.{ext}")) {
                        base["outputs"][key] = Value::String(format!("{new}.{ext}"));
                    }
                }
            }
            json_patch::merge(&mut base, &patch);
            Ok(base)
        }
        Some(other) => Err(Error::Config(vec![format!("preset must be a string, got {other}")])),
    }
}

/// Resolves a preset name or reads a JSON scenario file.
pub fn load_config(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(v) = preset_value(spec) {
            return resolve_value(v);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: PathBuf::from(path),
        source: e,
    })?;
    resolve_value(merge_over_preset(value)?)
}

pub fn resolve_value(value: Value) -> Result<ScenarioConfig> {
    let raw: RawConfig = serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
    resolve(&raw)
}

fn draw_blocks(rng: &mut ChaCha8Rng, count: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    // The box of half-width radius/sqrt(dim) lies inside the ball.
    let half = radius / (dim as f64).sqrt();
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-half..=half)).collect())
        .collect()
}

/// Validates `raw`, reporting every violation at once. A step size above
/// the stiffness limit is reported as [`Error::StiffnessGuard`] when it is
/// the only problem.
pub fn resolve(raw: &RawConfig) -> Result<ScenarioConfig> {
    let mut errs = Vec::new();
    let model = builtin(&raw.model);
    if model.is_none() {
        errs.push(format!("unknown model {:?}", raw.model));
    }
    let graph = match &raw.graph {
        GraphSpec::Family { kind, n } => match kind {
            GraphKind::Ring => Graph::ring(*n),
            GraphKind::Path => Graph::path(*n),
            GraphKind::Complete => Graph::complete(*n),
        },
        GraphSpec::Edges { n_agents, edges } => Graph::new(*n_agents, edges),
    };
    let graph = graph.map_err(|e| errs.push(format!("graph: {e}"))).ok();
    let dec = graph
        .as_ref()
        .and_then(|g| g.decompose().map_err(|e| errs.push(format!("graph: {e}"))).ok());

    let b = raw.bounds;
    for (name, v) in [("m_x", b.m_x), ("m_theta", b.m_theta), ("delta", b.delta)] {
        if !(v > 0.0 && v.is_finite()) {
            errs.push(format!("bounds.{name} must be positive, got {v}"));
        }
    }
    let k = raw.gains.k;
    if !(k >= 0.0 && k.is_finite()) {
        errs.push(format!("gains.k must be nonnegative, got {k}"));
    }
    let (g, g_overridden) = match raw.gains.g {
        AutoF64::Keyword(Keyword::Auto) if k > 0.0 => (1.0 / k.sqrt(), false),
        AutoF64::Keyword(Keyword::Auto) => {
            errs.push("gains.g = \"auto\" needs k > 0".into());
            (0.0, false)
        }
        AutoF64::Value(g) => {
            if !(g >= 0.0 && g.is_finite()) {
                errs.push(format!("gains.g must be nonnegative, got {g}"));
            }
            (g, k > 0.0 && (g - 1.0 / k.sqrt()).abs() > 1e-12)
        }
        AutoF64::Keyword(Keyword::Random) => {
            errs.push("gains.g must be a number or \"auto\"".into());
            (0.0, false)
        }
    };
    let lambda_n = dec.as_ref().map_or(0.0, |d| d.lambda_n());
    let dt = match raw.integrator.dt {
        AutoF64::Value(dt) => dt,
        AutoF64::Keyword(Keyword::Auto) if k * lambda_n > 0.0 => 0.4 / (k * lambda_n),
        AutoF64::Keyword(Keyword::Auto) => 0.01,
        AutoF64::Keyword(Keyword::Random) => {
            errs.push("integrator.dt must be a number or \"auto\"".into());
            f64::NAN
        }
    };
    let t_end = raw.integrator.t_end;
    if !(dt > 0.0 && dt.is_finite()) {
        errs.push(format!("integrator.dt must be positive, got {dt}"));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        errs.push(format!("integrator.t_end must be positive, got {t_end}"));
    }
    let record_every = match raw.integrator.record_interval {
        None => 1,
        Some(r) if r > 0.0 && dt > 0.0 => ((r / dt).round() as usize).max(1),
        Some(r) => {
            errs.push(format!("integrator.record_interval must be positive, got {r}"));
            1
        }
    };

    let needs_seed = [&raw.initial.x, &raw.initial.theta]
        .iter()
        .any(|s| matches!(s, InitSpec::Keyword(Keyword::Random)));
    let seed = raw.seed.unwrap_or_else(|| {
        if needs_seed {
            warn!(
                "{}: random initial conditions without a seed; using {DEFAULT_SEED}",
                raw.name
            );
        }
        DEFAULT_SEED
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let big_n = graph.as_ref().map_or(0, |g| g.n_agents());
    let (n, p) = model.as_ref().map_or((0, 0), |m| (m.state_dim(), m.param_dim()));
    let mut blocks = |spec: &InitSpec, dim: usize, radius: f64, what: &str| -> Vec<Vec<f64>> {
        match spec {
            InitSpec::Keyword(Keyword::Random) => draw_blocks(&mut rng, big_n, dim, radius),
            InitSpec::Keyword(Keyword::Auto) => {
                errs.push(format!("initial.{what} must be a list of vectors or \"random\""));
                Vec::new()
            }
            InitSpec::Explicit(v) => {
                if v.len() != big_n || v.iter().any(|b| b.len() != dim) {
                    errs.push(format!("initial.{what} must hold {big_n} vectors of length {dim}"));
                }
                for (i, b) in v.iter().enumerate() {
                    let r = crate::linalg::norm(b);
                    if r > radius * (1.0 + 1e-12) {
                        errs.push(format!("initial.{what}[{i}] has norm {r} > {radius}"));
                    }
                }
                v.clone()
            }
        }
    };
    let x0 = blocks(&raw.initial.x, n, b.m_x, "x");
    let theta0 = blocks(&raw.initial.theta, p, b.m_theta, "theta");

    let theta_star = raw.theta_star.clone().unwrap_or_else(|| theta0.clone());
    if theta_star.iter().any(|t| t.len() != p) {
        errs.push(format!("theta_star entries must have length {p}"));
    }

    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let gains = CouplingGains::new(k, g)?;
    if g_overridden {
        warn!(
            "{}: g = {g} overrides the default 1/sqrt(k) = {}",
            raw.name,
            1.0 / k.sqrt()
        );
    }
    let limit = stiffness_limit(k, lambda_n);
    if raw.integrator.stiffness_guard && dt > limit {
        return Err(Error::StiffnessGuard { dt, limit });
    }
    Ok(ScenarioConfig {
        name: raw.name.clone(),
        model_name: raw.model.clone(),
        model: model.expect("validated"),
        graph: graph.expect("validated"),
        bounds: b,
        x0,
        theta0,
        gains,
        g_overridden,
        dt,
        t_end,
        record_every,
        stiffness_guard: raw.integrator.stiffness_guard,
        outputs: raw.outputs.clone(),
        seed,
        thresholds: raw.thresholds,
        theta_star,
        analysis: raw.analysis.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_with(mut patch: Value) -> Result<ScenarioConfig> {
        patch["preset"] = json!("fig2");
        resolve_value(merge_over_preset(patch)?)
    }

    #[test]
    fn fig2_preset() {
        let cfg = load_config("fig2").unwrap();
        assert_eq!(cfg.graph, Graph::ring(3).unwrap());
        assert_eq!(cfg.model_name, "scalar_linear_sine");
        assert_eq!(cfg.gains.k, 50.0);
        assert!((cfg.gains.g - 1.0 / 50f64.sqrt()).abs() < 1e-15);
        assert!((cfg.dt - 0.4 / 150.0).abs() < 1e-15);
        assert!(!cfg.g_overridden);
        assert!(cfg.x0.iter().all(|x| x[0].abs() <= 2.0));
    }

    #[test]
    fn auto_gain() {
        let cfg = fig2_with(json!({"gains": {"k": 100.0, "g": "auto"}})).unwrap();
        assert!((cfg.gains.g - 0.1).abs() < 1e-15);
        let cfg = fig2_with(json!({"gains": {"k": 100.0, "g": 0.3}})).unwrap();
        assert!(cfg.g_overridden);
    }

    #[test]
    fn stiffness_at_load_time() {
        let r = fig2_with(json!({"integrator": {"dt": 0.01}}));
        assert!(matches!(r, Err(Error::StiffnessGuard { .. })));
    }

    #[test]
    fn every_violation_is_listed() {
        let r = fig2_with(json!({"model": "nope", "bounds": {"delta": -1.0}, "integrator": {"t_end": 0.0}}));
        match r {
            Err(Error::Config(list)) => assert!(list.len() >= 3, "{list:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_initial_conditions_are_checked() {
        let r = fig2_with(json!({"initial": {"x": [[3.0], [0.0], [0.0]]}}));
        assert!(matches!(r, Err(Error::Config(_))));
        let cfg = fig2_with(json!({"initial": {"x": [[1.0], [0.0], [-1.0]]}})).unwrap();
        assert_eq!(cfg.x0, vec![vec![1.0], vec![0.0], vec![-1.0]]);
    }

    #[test]
    fn seed_changes_draws_only() {
        let a = fig2_with(json!({"seed": 1})).unwrap();
        let b = fig2_with(json!({"seed": 2})).unwrap();
        assert_ne!(a.x0, b.x0);
        assert_eq!(a.theta0, b.theta0);
        assert_eq!(fig2_with(json!({"seed": 1})).unwrap().x0, a.x0);
    }

    #[test]
    fn file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(
            &path,
            r#"{"preset": "fig2", "gains": {"k": 25}, "integrator": {"t_end": 10}}"#,
        )
        .unwrap();
        let cfg = load_config(path.to_str().unwrap()).unwrap();
        assert_eq!(cfg.gains.k, 25.0);
        assert_eq!(cfg.t_end, 10.0);
        assert!((cfg.gains.g - 0.2).abs() < 1e-15);
    }

    #[test]
    fn edge_list_graph_and_bad_edges() {
        let cfg = fig2_with(json!({"graph": {"n_agents": 3, "edges": [[0, 1], [1, 2]]}, "gains": {"k": 10}})).unwrap();
        assert_eq!(cfg.graph, Graph::path(3).unwrap());
        assert!(fig2_with(json!({"graph": {"n_agents": 3, "edges": [[0, 0]]}})).is_err());
    }

    #[test]
    fn renamed_scenario_renames_outputs() {
        let cfg = fig2_with(json!({"name": "short"})).unwrap();
        assert_eq!(cfg.outputs.csv.as_deref(), Some("short.csv"));
        assert_eq!(cfg.outputs.plot.as_deref(), Some("short.svg"));
        let cfg = fig2_with(json!({"name": "short", "outputs": {"csv": "keep.csv"}})).unwrap();
        assert_eq!(cfg.outputs.csv.as_deref(), Some("keep.csv"));
        assert_eq!(cfg.outputs.plot.as_deref(), Some("short.svg"));
    }

    #[test]
    fn fig1_presets() {
        let a = load_config("fig1a").unwrap();
        assert_eq!(a.gains.k, 0.0);
        assert_eq!(a.dt, 0.01);
        let c = load_config("fig1c").unwrap();
        assert!(c.gains.g > 0.0);
        assert_eq!(c.x0, load_config("fig1b").unwrap().x0);
    }
}
