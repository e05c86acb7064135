//! Decay certificates for `w' = -g psi^T psi w`, the matrix `P` and the
//! Lyapunov function built from it.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_eig_range};
use crate::model::Regressor;
use crate::simulation::DenseReference;

/// Matrix-valued signal of time.
pub type MatrixPath<'a> = dyn Fn(f64) -> DMatrix<f64> + Sync + 'a;

fn check_finite(m: &DMatrix<f64>, t: f64) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup { t, partial: None })
    }
}

/// RK4 for `Phi' = F(t) Phi`, `Phi(t0) = I`, over `steps` equal steps.
/// `visit` sees `(t, Phi(t, t0))` after every step.
fn propagate(
    f: &MatrixPath,
    t0: f64,
    t1: f64,
    steps: usize,
    mut visit: impl FnMut(f64, &DMatrix<f64>),
) -> Result<DMatrix<f64>> {
    let p = f(t0).nrows();
    let mut phi = DMatrix::<f64>::identity(p, p);
    if steps == 0 {
        return Ok(phi);
    }
    let h = (t1 - t0) / steps as f64;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let f_mid = f(t + 0.5 * h);
        let k1 = f(t) * &phi;
        let k2 = &f_mid * (&phi + &k1 * (0.5 * h));
        let k3 = &f_mid * (&phi + &k2 * (0.5 * h));
        let k4 = f(t + h) * (&phi + &k3 * h);
        phi += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        let t_next = t0 + (i + 1) as f64 * h;
        check_finite(&phi, t_next)?;
        visit(t_next, &phi);
    }
    Ok(phi)
}

fn steps_for(span: f64, dt: f64) -> usize {
    if span <= 0.0 {
        0
    } else {
        (span / dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// State-transition matrix `Phi(t1, t0)` of `w' = F(t) w`.
pub fn state_transition(f: &MatrixPath, t0: f64, t1: f64, dt: f64) -> Result<DMatrix<f64>> {
    if t1 < t0 {
        return Err(Error::shape(format!(
            "state_transition needs t1 >= t0, got {t1} < {t0}"
        )));
    }
    propagate(f, t0, t1, steps_for(t1 - t0, dt), |_, _| {})
}

/// `F(t) = -g psi^T psi` for a regressor signal.
pub fn ltv_generator<'a>(psi: &'a MatrixPath<'a>, g: f64) -> impl Fn(f64) -> DMatrix<f64> + Sync + 'a {
    move |t| {
        let m = psi(t);
        m.transpose() * m * (-g)
    }
}

/// Exponential decay constants for the parameter-error LTV system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub m_hat: f64,
    pub b_hat: f64,
    pub m: f64,
    pub b: f64,
    pub m_psi: f64,
    pub l_psi: f64,
    /// `b_hat` was reduced to `c / 2` because the raw value reached `c`.
    pub shrunk: bool,
}

impl DecayBounds {
    /// `sqrt(kappa1/kappa2) exp(-c1 span / (4 kappa1))`, the bound on
    /// `|Phi(t0 + span, t0)|` for `w' = -psi^T psi w`.
    pub fn unit_gain_bound(&self, c1: f64, span: f64) -> f64 {
        (self.kappa1 / self.kappa2).sqrt() * (-c1 * span / (4.0 * self.kappa1)).exp()
    }

    /// `m exp(-g b span)`.
    pub fn bound(&self, g: f64, span: f64) -> f64 {
        self.m * (-g * self.b * span).exp()
    }
}

pub fn decay_bounds(c1: f64, c2: f64, tau: f64, m_psi: f64, c: f64, l_psi: f64, m_x: f64) -> Result<DecayBounds> {
    let positive = [("c1", c1), ("c2", c2), ("tau", tau), ("M_psi", m_psi), ("c", c)];
    if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidBounds(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    if !(l_psi >= 0.0) || !(m_x >= 0.0) {
        return Err(Error::InvalidBounds(format!(
            "L_psi = {l_psi}, M_x = {m_x} must be nonnegative"
        )));
    }
    if c1 > c2 {
        return Err(Error::InvalidBounds(format!("c1 = {c1} exceeds c2 = {c2}")));
    }
    let kappa2 = (2.0 * (tau * m_psi * c2).powi(2) + tau * c1) / c1;
    let kappa1 = kappa2 + tau * c2;
    let m_hat = (1.0 + c1 / (2.0 * (2.0 * tau * c1).sqrt() * m_psi)).sqrt();
    let mut b_hat = c1 / (4.0 * kappa1);
    let shrunk = b_hat >= c;
    if shrunk {
        b_hat = c / 2.0;
    }
    let m = m_hat * (1.0 + 4.0 * m_psi * l_psi * m_x / (c - b_hat));
    Ok(DecayBounds {
        kappa1,
        kappa2,
        m_hat,
        b_hat,
        m,
        b: b_hat,
        m_psi,
        l_psi,
        shrunk,
    })
}

/// Uniform bounds `lambda_m I <= P <= lambda_M I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PBounds {
    pub lambda_m: f64,
    #[serde(rename = "lambda_M")]
    pub lambda_big_m: f64,
}

impl PBounds {
    pub fn from_decay(d: &DecayBounds) -> Self {
        Self {
            lambda_m: 1.0 / (2.0 * d.m_psi * d.m_psi),
            lambda_big_m: d.m * d.m / (2.0 * d.b),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbedDecayReport {
    /// Largest `|Phi(t1,t0)| / (m e^{-g b (t1-t0)})` seen.
    pub max_ratio: f64,
    pub holds: bool,
    pub pairs_checked: usize,
    /// `(initial condition index, t0, t1)` at the largest ratio.
    pub worst: (usize, f64, f64),
}

/// Checks `|Phi(t1,t0)| <= m e^{-g b (t1 - t0)}` along reference solutions
/// `s' = psi(s,t) theta_star` from each initial condition, for 20 start
/// times on `[0, horizon)` and every integration step after each.
pub fn perturbed_decay_certificate(
    model: &dyn Regressor,
    theta_star: &[f64],
    s0_list: &[Vec<f64>],
    g: f64,
    horizon: f64,
    dt: f64,
    bounds: &DecayBounds,
) -> Result<PerturbedDecayReport> {
    let per_s0: Vec<Result<(f64, usize, f64, f64)>> = s0_list
        .par_iter()
        .map(|s0| {
            let reference = DenseReference::new(model, theta_star, s0, horizon, dt)?;
            let psi = |t: f64| model.psi(&reference.eval(t), t);
            let f = ltv_generator(&psi, g);
            let mut worst = (0.0, 0usize, 0.0, 0.0);
            for i in 0..20 {
                let t0 = horizon * i as f64 / 20.0;
                propagate(&f, t0, horizon, steps_for(horizon - t0, dt), |t1, phi| {
                    let ratio = spectral_norm(phi) / bounds.bound(g, t1 - t0);
                    worst.1 += 1;
                    if ratio > worst.0 {
                        worst = (ratio, worst.1, t0, t1);
                    }
                })?;
            }
            Ok(worst)
        })
        .collect();

    let mut report = PerturbedDecayReport {
        max_ratio: 0.0,
        holds: true,
        pairs_checked: 0,
        worst: (0, 0.0, 0.0),
    };
    for (idx, r) in per_s0.into_iter().enumerate() {
        let (ratio, count, t0, t1) = r?;
        report.pairs_checked += count;
        if ratio > report.max_ratio {
            report.max_ratio = ratio;
            report.worst = (idx, t0, t1);
        }
    }
    report.holds = report.max_ratio <= 1.0;
    Ok(report)
}

/// `g int_t^T Phi^T(s,t) Phi(s,t) ds` by the trapezoid rule with the
/// Euler-Maclaurin end correction, together with `Phi(T, t)`.
fn truncated_p(f: &MatrixPath, g: f64, t: f64, horizon: f64, steps: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = (horizon - t) / steps as f64;
    let f_t = f(t);
    let p = f_t.nrows();
    let mut sum = DMatrix::<f64>::identity(p, p) * 0.5;
    let mut last = DMatrix::<f64>::identity(p, p);
    let phi_end = propagate(f, t, horizon, steps, |_, phi| {
        let gram = phi.transpose() * phi;
        sum += &gram;
        last = gram;
    })?;
    sum -= last * 0.5;
    // d/ds (Phi^T Phi) = Phi^T (F + F^T) Phi
    let f_end = f(horizon);
    let d_end = phi_end.transpose() * (&f_end + f_end.transpose()) * &phi_end;
    let d_start = &f_t + f_t.transpose();
    let integral = sum * h - (d_end - d_start) * (h * h / 12.0);
    Ok((integral * g, phi_end))
}

/// `P(t)` truncated at `horizon`, with the certified bound on what the
/// truncation leaves out.
#[derive(Debug, Clone)]
pub struct PMatrix {
    pub t: f64,
    pub p: DMatrix<f64>,
    /// `P_true - P` lies between `0` and `tail * I`.
    pub tail: f64,
}

impl PMatrix {
    pub fn eig_range(&self) -> (f64, f64) {
        sym_eig_range(&self.p)
    }

    /// `lambda_m I <= P` and `P + tail I <= lambda_M I`.
    pub fn within(&self, bounds: &PBounds) -> bool {
        let (lo, hi) = self.eig_range();
        lo >= bounds.lambda_m * (1.0 - 1e-9) && hi + self.tail <= bounds.lambda_big_m
    }
}

fn tail_bound(phi_end: &DMatrix<f64>, bounds: &PBounds) -> Result<f64> {
    let tail = bounds.lambda_big_m * spectral_norm(phi_end).powi(2);
    let limit = 1e-3 * bounds.lambda_m;
    if tail > limit {
        return Err(Error::TailTooLarge { tail, limit });
    }
    Ok(tail)
}

/// `P(t) = g int_t^inf Phi^T Phi` for `F = -g psi^T psi`, truncated at
/// `horizon`. The tail bound `lambda_M |Phi(horizon, t)|^2` follows from the
/// exponential certificate; it must be below `1e-3 lambda_m`.
pub fn p_matrix(psi: &MatrixPath, g: f64, t: f64, horizon: f64, dt: f64, bounds: &PBounds) -> Result<PMatrix> {
    if !(g > 0.0) {
        return Err(Error::InvalidGain(format!("P requires g > 0, got {g}")));
    }
    if horizon <= t {
        return Err(Error::shape(format!("horizon {horizon} must exceed t = {t}")));
    }
    let f = ltv_generator(psi, g);
    let (p, phi_end) = truncated_p(&f, g, t, horizon, steps_for(horizon - t, dt))?;
    let tail = tail_bound(&phi_end, bounds)?;
    Ok(PMatrix { t, p, tail })
}

/// `P` at each of the ascending `times` by integrating
/// `P' = -P F - F^T P - g I` backward from `P(horizon) = 0`, alongside
/// `Phi(horizon, t)` for the tail bounds.
pub fn p_matrix_path(
    psi: &MatrixPath,
    g: f64,
    times: &[f64],
    horizon: f64,
    dt: f64,
    bounds: &PBounds,
) -> Result<Vec<PMatrix>> {
    if !(g > 0.0) {
        return Err(Error::InvalidGain(format!("P requires g > 0, got {g}")));
    }
    let Some(&t_last) = times.last() else {
        return Ok(Vec::new());
    };
    if horizon <= t_last || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::shape("times must ascend and end before the horizon"));
    }
    let f = ltv_generator(psi, g);
    let p_dim = f(horizon).nrows();
    let eye = DMatrix::<f64>::identity(p_dim, p_dim);

    // y = (P, Q) with Q(t) = Phi(horizon, t); Q' = -Q F.
    let rhs = |t: f64, p: &DMatrix<f64>, q: &DMatrix<f64>| {
        let ft = f(t);
        let dp = -(p * &ft) - ft.transpose() * p - &eye * g;
        let dq = -(q * &ft);
        (dp, dq)
    };

    let mut p = DMatrix::<f64>::zeros(p_dim, p_dim);
    let mut q = eye.clone();
    let mut t = horizon;
    let mut out = Vec::with_capacity(times.len());
    for &target in times.iter().rev() {
        let steps = steps_for(t - target, dt);
        if steps > 0 {
            let h = -(t - target) / steps as f64;
            for i in 0..steps {
                let s = t + i as f64 * h;
                let (a1, b1) = rhs(s, &p, &q);
                let (a2, b2) = rhs(s + 0.5 * h, &(&p + &a1 * (0.5 * h)), &(&q + &b1 * (0.5 * h)));
                let (a3, b3) = rhs(s + 0.5 * h, &(&p + &a2 * (0.5 * h)), &(&q + &b2 * (0.5 * h)));
                let (a4, b4) = rhs(s + h, &(&p + &a3 * h), &(&q + &b3 * h));
                p += (a1 + (a2 + a3) * 2.0 + a4) * (h / 6.0);
                q += (b1 + (b2 + b3) * 2.0 + b4) * (h / 6.0);
            }
            check_finite(&p, target)?;
            t = target;
        }
        let sym = (&p + p.transpose()) * 0.5;
        out.push(PMatrix {
            t: target,
            p: sym,
            tail: tail_bound(&q, bounds)?,
        });
    }
    out.reverse();
    Ok(out)
}

/// `|P'(t) + P F + F^T P + g I|` with `P'` from central differences of the
/// quadrature definition. All three evaluations share one horizon and step
/// count, so the truncation terms cancel in the residual.
pub fn lyapunov_residual(psi: &MatrixPath, g: f64, t: f64, horizon: f64, dt: f64, eps: f64) -> Result<f64> {
    let f = ltv_generator(psi, g);
    let steps = steps_for(horizon - t, dt);
    let (p_minus, _) = truncated_p(&f, g, t - eps, horizon, steps)?;
    let (p_mid, _) = truncated_p(&f, g, t, horizon, steps)?;
    let (p_plus, _) = truncated_p(&f, g, t + eps, horizon, steps)?;
    let ft = f(t);
    let p_dot = (p_plus - p_minus) / (2.0 * eps);
    let p_dim = ft.nrows();
    let residual = p_dot + &p_mid * &ft + ft.transpose() * &p_mid + DMatrix::<f64>::identity(p_dim, p_dim) * g;
    Ok(spectral_norm(&residual))
}

/// `V = (k^2/2) xi^T xi + (1/2) vartheta~^T (I (x) P) vartheta~`.
pub fn lyapunov_value(xi: &[f64], vartheta_tilde: &[f64], p: &DMatrix<f64>, k: f64) -> f64 {
    let dim = p.nrows();
    let quad: f64 = vartheta_tilde
        .chunks(dim.max(1))
        .map(|v| {
            let v = nalgebra::DVector::from_column_slice(v);
            (v.transpose() * p * &v)[0]
        })
        .sum();
    0.5 * k * k * xi.iter().map(|v| v * v).sum::<f64>() + 0.5 * quad
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// Adaptation off; nothing was checked.
    pub skipped: bool,
    pub samples: usize,
    pub violations: usize,
    /// Fraction of samples satisfying the inequality.
    pub pass_fraction: f64,
    /// Target rate `g / (6 lambda_M)`.
    pub rate: f64,
    /// Largest `V' + rate V - tol (1 + V)` seen; nonpositive when all pass.
    pub max_excess: f64,
}

/// Tests `V' <= -(g/(6 lambda_M)) V + tol (1 + V)` at interior samples with
/// central differences. `tol = 10 h^2 max|V''|`, the second difference
/// taken over the sample and its two neighbours.
pub fn decay_check(times: &[f64], v: &[f64], g: f64, bounds: &PBounds) -> DecayReport {
    let rate = g / (6.0 * bounds.lambda_big_m);
    let mut report = DecayReport {
        skipped: g == 0.0 || times.len() < 5,
        samples: 0,
        violations: 0,
        pass_fraction: 1.0,
        rate,
        max_excess: f64::NEG_INFINITY,
    };
    if report.skipped {
        return report;
    }
    let second = |j: usize| {
        let (h1, h2) = (times[j] - times[j - 1], times[j + 1] - times[j]);
        2.0 * ((v[j + 1] - v[j]) / h2 - (v[j] - v[j - 1]) / h1) / (h1 + h2)
    };
    for j in 2..times.len() - 2 {
        let h = 0.5 * (times[j + 1] - times[j - 1]);
        let v_dot = (v[j + 1] - v[j - 1]) / (times[j + 1] - times[j - 1]);
        let v_ddot = second(j - 1).abs().max(second(j).abs()).max(second(j + 1).abs());
        let tol = 10.0 * h * h * v_ddot;
        let excess = v_dot + rate * v[j] - tol * (1.0 + v[j]);
        report.samples += 1;
        if excess > 0.0 {
            report.violations += 1;
        }
        report.max_excess = report.max_excess.max(excess);
    }
    report.pass_fraction = 1.0 - report.violations as f64 / report.samples as f64;
    report
}
