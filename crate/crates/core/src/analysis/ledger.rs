//! Proof constants and coupling thresholds for a concrete problem.
//!
//! Everything here is evaluated numerically. Sampled quantities (`c`, `c1`,
//! `c2`, `L_psi`, `M_Psi~`, `L_Psi~`) are estimates on documented grids,
//! not certified bounds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use super::contraction::{contraction_margin, state_grid, time_grid, with_box_corners, ContractionEstimate};
use super::ltv::{decay_bounds, DecayBounds, PBounds};
use super::pe::{pe_gram, regressor_along, PeEstimate};
use crate::error::{Error, Result};
use crate::graph::LaplacianDecomposition;
use crate::linalg::{norm, spectral_norm};
use crate::model::{psi_partials_x, Regressor};
use crate::simulation::{reference_trajectory, IntegratorConfig, Trajectory};
use crate::transforms::tilde_psi;

/// Inputs to the constant ledger.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemInstance {
    pub n_agents: usize,
    pub lambda2: f64,
    pub lambda_n: f64,
    pub m_x: f64,
    pub m_theta: f64,
    pub delta: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub tau: f64,
    pub l_psi: f64,
    pub l_tilde_psi: f64,
    pub m_tilde_psi: f64,
}

/// A coupling threshold, or the fact that none exists in `[1, 1e12]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Value(f64),
    Infeasible,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Value(v) => Some(v),
            Threshold::Infeasible => None,
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Value(v) => s.serialize_f64(*v),
            Threshold::Infeasible => s.serialize_str("Infeasible"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProofConstants {
    #[serde(rename = "M_s")]
    pub m_s: f64,
    #[serde(rename = "M_psi")]
    pub m_psi: f64,
    pub delta: f64,
    pub delta_o: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub decay: DecayBounds,
    pub p_bounds: PBounds,
    #[serde(rename = "G_chi_o")]
    pub g_chi_o: f64,
    #[serde(rename = "G_chi_tilde")]
    pub g_chi_tilde: f64,
    #[serde(rename = "G_vartheta_o")]
    pub g_vartheta_o: f64,
    #[serde(rename = "G_vartheta_tilde")]
    pub g_vartheta_tilde: f64,
    #[serde(rename = "G_theta")]
    pub g_theta: f64,
    #[serde(rename = "M_tilde_psi")]
    pub m_tilde_psi: f64,
    #[serde(rename = "L_tilde_psi")]
    pub l_tilde_psi: f64,
    #[serde(rename = "M_dpsi")]
    pub m_dpsi: f64,
    #[serde(rename = "M_xi")]
    pub m_xi: f64,
    /// `C_1 .. C_12`.
    #[serde(rename = "C")]
    pub big_c: [f64; 12],
    /// `k_1* .. k_10*`.
    pub k_star_i: [Threshold; 10],
    /// `max{1, k_i*}`; `None` when any threshold is infeasible.
    pub k_star: Option<f64>,
}

impl ProofConstants {
    pub fn c(&self, i: usize) -> f64 {
        self.big_c[i - 1]
    }
}

/// `M_s = max{M_x, rho(0) M_theta / c}`.
pub fn m_s(m_x: f64, m_theta: f64, rho0: f64, c: f64) -> f64 {
    m_x.max(rho0 * m_theta / c)
}

/// `delta_o = min{delta, c delta/(2 M_psi), c/(16 lambda_M M_psi^2 L_psi), c/(2 L_psi)}`.
pub fn delta_o(delta: f64, c: f64, m_psi: f64, lambda_big_m: f64, l_psi: f64) -> f64 {
    delta
        .min(c * delta / (2.0 * m_psi))
        .min(c / (16.0 * lambda_big_m * m_psi * m_psi * l_psi))
        .min(c / (2.0 * l_psi))
}

/// `T0 = (delta_o / 2) / ((M_psi + M_Psi~) lambda_N G_chi~)`.
pub fn t0(delta_o: f64, m_psi: f64, m_tilde_psi: f64, lambda_n: f64, g_chi_tilde: f64) -> f64 {
    0.5 * delta_o / ((m_psi + m_tilde_psi) * lambda_n * g_chi_tilde)
}

const K_MIN: f64 = 1.0;
const K_MAX: f64 = 1e12;

/// Smallest `k` in `[1, 1e12]` past which `holds` is true on a log grid of
/// 20 points per decade, refined by bisection to `1e-6` relative. The scan
/// tolerates predicates that are not monotone at small `k`.
pub fn smallest_k(holds: impl Fn(f64) -> bool) -> Threshold {
    let per_decade = 20usize;
    let points = 12 * per_decade + 1;
    let grid = |i: usize| K_MIN * 10f64.powf(i as f64 / per_decade as f64);
    if !holds(K_MAX) {
        return Threshold::Infeasible;
    }
    let Some(last_fail) = (0..points).rev().find(|&i| !holds(grid(i))) else {
        return Threshold::Value(K_MIN);
    };
    let (mut lo, mut hi) = (grid(last_fail), grid(last_fail + 1));
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Threshold::Value(hi)
}

/// Evaluates the ledger in dependency order.
pub fn proof_constants(inst: &ProblemInstance, rho: &dyn Fn(f64) -> f64) -> Result<ProofConstants> {
    let positive = [
        ("M_x", inst.m_x),
        ("M_theta", inst.m_theta),
        ("delta", inst.delta),
        ("c", inst.c),
        ("c1", inst.c1),
        ("c2", inst.c2),
        ("tau", inst.tau),
        ("lambda2", inst.lambda2),
        ("lambda_N", inst.lambda_n),
        ("L_psi", inst.l_psi),
    ];
    let mut problems: Vec<String> = positive
        .iter()
        .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
        .map(|(name, v)| format!("{name} must be positive, got {v}"))
        .collect();
    if inst.n_agents < 2 {
        problems.push("at least two agents are required".into());
    }
    if !(inst.m_tilde_psi >= 0.0) || !(inst.l_tilde_psi >= 0.0) {
        problems.push("M_Psi~ and L_Psi~ must be nonnegative".into());
    }
    if !problems.is_empty() {
        return Err(Error::InvalidBounds(problems.join("; ")));
    }

    let n = inst.n_agents as f64;
    let sqrt_n = n.sqrt();
    let (l2, ln) = (inst.lambda2, inst.lambda_n);
    let delta = inst.delta;

    let rho0 = rho(0.0);
    let m_s = m_s(inst.m_x, inst.m_theta, rho0, inst.c);
    let m_psi = rho(m_s + delta);
    if !(rho0 >= 0.0 && m_psi > 0.0 && m_psi.is_finite() && m_psi >= rho0) {
        return Err(Error::InvalidBounds(format!(
            "rho does not cover [0, M_s + delta]: rho(0) = {rho0}, rho({}) = {m_psi}",
            m_s + delta
        )));
    }
    let decay = decay_bounds(inst.c1, inst.c2, inst.tau, m_psi, inst.c, inst.l_psi, inst.m_x)?;
    let pb = PBounds::from_decay(&decay);
    let (lam_m, lam_big) = (pb.lambda_m, pb.lambda_big_m);
    let d_o = delta_o(delta, inst.c, m_psi, lam_big, inst.l_psi);

    let g_chi_o = m_s + delta;
    let g_chi_tilde = sqrt_n * inst.m_x + delta;
    let g_vartheta_o = inst.m_theta + delta;
    let g_vartheta_tilde = (lam_big / lam_m).sqrt() * (sqrt_n * inst.m_theta + delta / 2.0) + delta;
    let g_theta = sqrt_n * g_vartheta_o + g_vartheta_tilde;
    let (mt, lt) = (inst.m_tilde_psi, inst.l_tilde_psi);
    let t_0 = t0(d_o, m_psi, mt, ln, g_chi_tilde);

    let c1 = m_psi * g_vartheta_o + mt * g_theta / sqrt_n;
    let c2 = (m_psi * g_vartheta_tilde + mt * g_theta) / l2;
    let c3 = lt * g_theta;
    let c4 = m_psi * m_psi + m_psi * mt * ln / l2;
    let m_dpsi = rho(g_chi_o) * (1.0 + c1);
    let c5 = (lt * m_psi * g_theta + m_dpsi) / l2;
    let c6 = (m_psi.powi(3) + m_psi * m_psi * mt) / l2;
    let c7 = c3 + c4;
    let c8 = (c5 + c6) * g_vartheta_tilde;
    let c9 = lam_big * ln * (m_psi + mt);
    let c10 = lam_big * m_psi * m_psi * lt * g_vartheta_tilde / l2;
    let c11 = lam_big * m_psi * lt * g_vartheta_tilde;
    let sqrt_lm = lam_m.sqrt();
    let c12 = 2.0 * lt / sqrt_n * (ln + ln * m_psi / (l2 * sqrt_lm) + m_psi / sqrt_lm + m_psi * m_psi / (l2 * lam_m));
    let m_xi = sqrt_n * inst.m_x + m_psi * sqrt_n * inst.m_theta / l2;

    let (m_x, c, l_psi) = (inst.m_x, inst.c, inst.l_psi);
    let early_gap = |k: f64| t_0 / k.sqrt() * (m_psi * d_o + lt * m_x * g_theta);

    let k1 = Threshold::Value(c2 / (sqrt_n * m_x));
    let k2 = smallest_k(|k| early_gap(k) <= delta / 2.0);
    let k3 = smallest_k(|k| (-l2 * t_0 * k.sqrt()).exp() * sqrt_n * m_x <= c2 / k && c2 / k < delta / 2.0);
    let k4 = smallest_k(|k| {
        let late = m_psi * d_o / c + 2.0 * lt * c2 * g_theta / (k * c * sqrt_n);
        early_gap(k).max(late) < (1.0 / (8.0 * lam_big * m_psi * l_psi)).min(delta)
    });
    let k5 = smallest_k(|k| {
        let gap = k * l2 - c7;
        gap > 0.0 && (-gap * t_0 / k.sqrt()).exp() * m_xi + c8 / (k * gap) <= 2.0 * c8 / (k * gap)
    });
    let k6 = Threshold::Value((3.0 * c7 / l2).max(12.0 * c10));
    let k7 = smallest_k(|k| {
        let rhs = k * c5 + k.sqrt() * (c6 + c9) + c11 / k.sqrt();
        l2 / 36.0 * k.powf(2.5) >= 0.25 * rhs * rhs
    });
    let k8 = smallest_k(|k| 2.0 * l2 * k / 3.0 >= 1.0 / (6.0 * lam_big * k.sqrt()));
    let k9 = smallest_k(|k| {
        let gap = k * l2 - c7;
        gap > 0.0 && 2.0 * c8 / (gap * sqrt_lm) < delta
    });
    let k10 = smallest_k(|k| {
        let gap = k * l2 - c7;
        gap > 0.0
            && 12.0 * lam_big * c12 * c8 * c8 / (k * gap * gap)
                + 3.0 * lam_big * lam_big * c12 * (sqrt_n * inst.m_theta + delta / 2.0).powi(2) / k
                < d_o / 2.0
    });
    let k_star_i = [k1, k2, k3, k4, k5, k6, k7, k8, k9, k10];
    let k_star = k_star_i.iter().try_fold(1.0f64, |acc, k| k.value().map(|v| acc.max(v)));

    Ok(ProofConstants {
        m_s,
        m_psi,
        delta,
        delta_o: d_o,
        t0: t_0,
        decay,
        p_bounds: pb,
        g_chi_o,
        g_chi_tilde,
        g_vartheta_o,
        g_vartheta_tilde,
        g_theta,
        m_tilde_psi: mt,
        l_tilde_psi: lt,
        m_dpsi,
        m_xi,
        big_c: [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12],
        k_star_i,
        k_star,
    })
}

/// Sampled `(M_Psi~, L_Psi~)` over `|chi_o| <= g_chi_o`, `|chi~| <= g_chi_tilde`,
/// `t` in `[0, t_span)`. Disagreement radii are drawn log-uniformly down to
/// `1e-4 g_chi_tilde` so the Lipschitz ratio sees small deviations too.
pub fn estimate_tilde_psi_bounds(
    model: &dyn Regressor,
    dec: &LaplacianDecomposition,
    g_chi_o: f64,
    g_chi_tilde: f64,
    t_span: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = model.state_dim();
    let m = dec.n_agents() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |dim: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let r = norm(&v);
            if r > 1e-3 && r <= 1.0 {
                return v.iter().map(|x| x / r).collect();
            }
        }
    };
    let (mut m_max, mut l_max) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let r_o = g_chi_o * rng.random::<f64>().powf(1.0 / n as f64);
        let chi_o: Vec<f64> = unit(n, &mut rng).iter().map(|v| v * r_o).collect();
        let r_t = g_chi_tilde * 10f64.powf(-4.0 * rng.random::<f64>());
        let chi_tilde: Vec<f64> = unit(m * n, &mut rng).iter().map(|v| v * r_t).collect();
        let t = t_span * rng.random::<f64>();
        let tp = tilde_psi(model, &chi_o, &chi_tilde, dec, t)?;
        let nrm = tp.norm();
        m_max = m_max.max(nrm);
        l_max = l_max.max(nrm / norm(&chi_tilde));
    }
    Ok((m_max, l_max))
}

/// Sampled `sup |d psi / d s|` as `sqrt(sum_j |d psi/d s_j|^2)`, an upper
/// bound on the Lipschitz ratio in every direction.
pub fn estimate_l_psi(model: &dyn Regressor, grid: &[Vec<f64>], t_grid: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for s in grid {
        for &t in t_grid {
            let sq: f64 = psi_partials_x(model, s, t)
                .iter()
                .map(|d| spectral_norm(d).powi(2))
                .sum();
            best = best.max(sq.sqrt());
        }
    }
    best
}

/// Options for [`build_instance`].
#[derive(Debug, Clone)]
pub struct InstanceOptions {
    pub m_x: f64,
    pub m_theta: f64,
    pub delta: f64,
    /// PE window.
    pub tau: f64,
    /// Length of each reference run used for the PE estimate.
    pub pe_horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Everything derived while assembling a [`ProblemInstance`].
#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub contraction: ContractionEstimate,
    /// Radius of the state grid used for `c` and `L_psi`.
    pub state_radius: f64,
    pub pe: PeEstimate,
    pub theta_samples: Vec<Vec<f64>>,
    pub instance: ProblemInstance,
}

/// Estimates `c`, `c1`, `c2`, `L_psi`, `M_Psi~`, `L_Psi~` for `model` on the
/// graph `dec`, with the parameter set given by `theta_star` plus its
/// bounding-box corners.
///
/// `c` and `M_s` depend on each other through the grid radius `M_s + delta`;
/// the estimate is repeated until the radius stops growing.
pub fn build_instance(
    model: &dyn Regressor,
    dec: &LaplacianDecomposition,
    theta_star: &[Vec<f64>],
    opts: &InstanceOptions,
) -> Result<InstanceReport> {
    let rho = |r: f64| model.rho(r);
    let Some(rho0) = rho(0.0) else {
        return Err(Error::InvalidBounds(format!(
            "model {} provides no rho bound",
            model.name()
        )));
    };
    if theta_star.is_empty() {
        return Err(Error::InvalidBounds("empty parameter sample".into()));
    }
    let n = model.state_dim();
    let thetas = with_box_corners(theta_star);
    let t_grid = time_grid(model.period().unwrap_or(20.0), 64);

    let mut radius = opts.m_x + opts.delta;
    let mut contraction = contraction_margin(model, &thetas, &state_grid(radius, n), &t_grid);
    for _ in 0..5 {
        if !contraction.contractive {
            break;
        }
        let next = m_s(opts.m_x, opts.m_theta, rho0, contraction.c) + opts.delta;
        if next <= radius * (1.0 + 1e-12) {
            break;
        }
        radius = next;
        contraction = contraction_margin(model, &thetas, &state_grid(radius, n), &t_grid);
    }
    if !contraction.contractive {
        return Err(Error::InvalidBounds(format!(
            "reference dynamics are not contractive on the sampled grid (c = {:.3e})",
            contraction.c
        )));
    }
    let c = contraction.c;

    let grid = state_grid(radius, n);
    for s in grid.iter().step_by(10) {
        let bound = rho(norm(s)).unwrap_or(f64::NAN);
        for &t in &t_grid {
            if spectral_norm(&model.psi(s, t)) > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidBounds(format!(
                    "rho({}) = {bound} does not bound |psi|",
                    norm(s)
                )));
            }
        }
    }
    let l_psi = estimate_l_psi(model, &grid, &t_grid);

    let cfg = IntegratorConfig::new(opts.dt, opts.pe_horizon);
    let mut pe: Option<PeEstimate> = None;
    for theta in &thetas {
        let s = reference_trajectory(model, theta, &vec![0.0; n], &cfg)?;
        let est = pe_gram(&regressor_along(model, &s), 0.0, s.times[1] - s.times[0], opts.tau)?;
        pe = Some(match pe {
            None => est,
            Some(mut acc) => {
                acc.c1 = acc.c1.min(est.c1);
                acc.c2 = acc.c2.max(est.c2);
                acc
            }
        });
    }
    let mut pe = pe.expect("nonempty theta samples");
    pe.windows.clear();
    if !pe.is_exciting() {
        return Err(Error::InvalidBounds(
            "regressor is not persistently exciting on the samples".into(),
        ));
    }

    let sqrt_n = (dec.n_agents() as f64).sqrt();
    let m_s_val = m_s(opts.m_x, opts.m_theta, rho0, c);
    let (m_tilde, l_tilde) = estimate_tilde_psi_bounds(
        model,
        dec,
        m_s_val + opts.delta,
        sqrt_n * opts.m_x + opts.delta,
        model.period().unwrap_or(20.0),
        opts.samples,
        opts.seed,
    )?;

    let instance = ProblemInstance {
        n_agents: dec.n_agents(),
        lambda2: dec.lambda2(),
        lambda_n: dec.lambda_n(),
        m_x: opts.m_x,
        m_theta: opts.m_theta,
        delta: opts.delta,
        c,
        c1: pe.c1,
        c2: pe.c2,
        tau: opts.tau,
        l_psi,
        l_tilde_psi: l_tilde,
        m_tilde_psi: m_tilde,
    };
    Ok(InstanceReport {
        contraction,
        state_radius: radius,
        pe,
        theta_samples: thetas,
        instance,
    })
}

/// Largest value of one trajectory-bound condition.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub max_value: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks the five a-priori bounds on every recorded sample:
/// `|chi_o| < G_chi_o`, `|chi~| < G_chi~`, `|vartheta_o| < G_vartheta_o`,
/// `|vartheta~| < G_vartheta~`, `|vartheta_o - vartheta_o(0)| < delta_o`.
pub fn trajectory_bounds(traj: &Trajectory, pc: &ProofConstants) -> Vec<BoundCheck> {
    let first = traj
        .derived
        .first()
        .map(|d| d.params.vartheta_o.clone())
        .unwrap_or_default();
    let max_of = |f: &dyn Fn(&crate::simulation::Derived) -> f64| traj.derived.iter().map(f).fold(0.0, f64::max);
    let entries: [(&'static str, f64, f64); 5] = [
        ("chi_o", max_of(&|d| norm(&d.sync.chi_o)), pc.g_chi_o),
        ("chi_tilde", max_of(&|d| d.sync.norm_tilde()), pc.g_chi_tilde),
        ("vartheta_o", max_of(&|d| norm(&d.params.vartheta_o)), pc.g_vartheta_o),
        (
            "vartheta_tilde",
            max_of(&|d| d.params.norm_tilde()),
            pc.g_vartheta_tilde,
        ),
        (
            "vartheta_o_drift",
            max_of(&|d| {
                let diff: Vec<f64> = d.params.vartheta_o.iter().zip(&first).map(|(a, b)| a - b).collect();
                norm(&diff)
            }),
            pc.delta_o,
        ),
    ];
    entries
        .into_iter()
        .map(|(name, max_value, bound)| BoundCheck {
            name,
            max_value,
            bound,
            holds: max_value < bound,
        })
        .collect()
}

/// `psi` along a dense reference, as a matrix path for the LTV routines.
pub fn psi_along<'a>(
    model: &'a dyn Regressor,
    reference: &'a crate::simulation::DenseReference,
) -> impl Fn(f64) -> DMatrix<f64> + Sync + 'a {
    move |t| model.psi(&reference.eval(t), t)
}
