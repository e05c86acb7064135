//! Consensus / disagreement coordinates.
//!
//! ```text
//! chi_o = (1/N) sum_i x_i            chi~ = (R^T (x) I_n) x
//! x_i   = chi_o + (r_i (x) I_n) chi~
//! xi    = chi~ - (1/k) (Lambda^-1 (x) psi(chi_o, t)) vartheta~
//! ```
//!
//! Kronecker products are applied block-wise and never materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::LaplacianDecomposition;
use crate::linalg::{norm, spectral_norm};
use crate::model::{CouplingGains, Regressor};

/// Average and disagreement components of the stacked agent states.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncCoords {
    /// `n` entries.
    pub chi_o: Vec<f64>,
    /// `(N-1) n` entries, block `j` belongs to column `j` of `R`.
    pub chi_tilde: Vec<f64>,
}

/// Mean parameter and parameter disagreement.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCoords {
    pub vartheta_o: Vec<f64>,
    pub vartheta_tilde: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiCoord {
    pub xi: Vec<f64>,
}

impl SyncCoords {
    pub fn norm_tilde(&self) -> f64 {
        norm(&self.chi_tilde)
    }
}

impl ParamCoords {
    pub fn norm_tilde(&self) -> f64 {
        norm(&self.vartheta_tilde)
    }
}

impl XiCoord {
    pub fn norm(&self) -> f64 {
        norm(&self.xi)
    }
}

fn check_blocks(dec: &LaplacianDecomposition, len: usize, dim: usize, what: &str) -> Result<()> {
    if dim == 0 || len != dec.n_agents() * dim {
        return Err(Error::shape(format!(
            "{what}: expected {} agents x {dim} entries, got {len}",
            dec.n_agents()
        )));
    }
    Ok(())
}

/// Returns `((1/N) (1^T (x) I) v, (R^T (x) I) v)`.
fn split(dec: &LaplacianDecomposition, v: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let big_n = dec.n_agents();
    let r = &dec.r_matrix;
    let mut mean = vec![0.0; dim];
    for i in 0..big_n {
        for c in 0..dim {
            mean[c] += v[i * dim + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= big_n as f64);
    let mut tilde = vec![0.0; (big_n - 1) * dim];
    for j in 0..big_n - 1 {
        for i in 0..big_n {
            let rij = r[(i, j)];
            for c in 0..dim {
                tilde[j * dim + c] += rij * v[i * dim + c];
            }
        }
    }
    (mean, tilde)
}

fn join(dec: &LaplacianDecomposition, mean: &[f64], tilde: &[f64], dim: usize) -> Vec<f64> {
    let big_n = dec.n_agents();
    let r = &dec.r_matrix;
    let mut out = Vec::with_capacity(big_n * dim);
    for i in 0..big_n {
        for c in 0..dim {
            let mut acc = mean[c];
            for j in 0..big_n - 1 {
                acc += r[(i, j)] * tilde[j * dim + c];
            }
            out.push(acc);
        }
    }
    out
}

pub fn to_sync_coords(dec: &LaplacianDecomposition, x: &[f64], state_dim: usize) -> Result<SyncCoords> {
    check_blocks(dec, x.len(), state_dim, "state")?;
    let (chi_o, chi_tilde) = split(dec, x, state_dim);
    Ok(SyncCoords { chi_o, chi_tilde })
}

pub fn from_sync_coords(dec: &LaplacianDecomposition, c: &SyncCoords) -> Result<Vec<f64>> {
    let n = c.chi_o.len();
    if n == 0 || c.chi_tilde.len() != (dec.n_agents() - 1) * n {
        return Err(Error::shape(format!(
            "disagreement vector has {} entries, expected {}",
            c.chi_tilde.len(),
            (dec.n_agents() - 1) * n
        )));
    }
    Ok(join(dec, &c.chi_o, &c.chi_tilde, n))
}

pub fn to_param_coords(dec: &LaplacianDecomposition, theta: &[f64], param_dim: usize) -> Result<ParamCoords> {
    check_blocks(dec, theta.len(), param_dim, "parameters")?;
    let (vartheta_o, vartheta_tilde) = split(dec, theta, param_dim);
    Ok(ParamCoords {
        vartheta_o,
        vartheta_tilde,
    })
}

pub fn from_param_coords(dec: &LaplacianDecomposition, pc: &ParamCoords) -> Result<Vec<f64>> {
    let p = pc.vartheta_o.len();
    if p == 0 || pc.vartheta_tilde.len() != (dec.n_agents() - 1) * p {
        return Err(Error::shape(format!(
            "parameter disagreement has {} entries, expected {}",
            pc.vartheta_tilde.len(),
            (dec.n_agents() - 1) * p
        )));
    }
    Ok(join(dec, &pc.vartheta_o, &pc.vartheta_tilde, p))
}

/// The block-diagonal deviation operator
/// `diag{ psi(chi_o + r_i chi~, t) - psi(chi_o, t) }`.
#[derive(Debug, Clone)]
pub struct TildePsi {
    /// One `n x p` block per agent.
    pub blocks: Vec<DMatrix<f64>>,
}

impl TildePsi {
    /// Induced 2-norm; for a block-diagonal operator this is the largest
    /// block norm.
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    /// Dense `Nn x Np` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let big_n = self.blocks.len();
        let (n, p) = self.blocks.first().map_or((0, 0), |b| b.shape());
        let mut out = DMatrix::zeros(big_n * n, big_n * p);
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((i * n, i * p), (n, p)).copy_from(b);
        }
        out
    }

    /// `Psi~ theta` as a stacked vector of `N` blocks of length `n`.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.blocks.first().map_or(0, |b| b.ncols());
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                let th = DVector::from_column_slice(&theta[i * p..(i + 1) * p]);
                (b * th).iter().copied().collect::<Vec<_>>()
            })
            .collect()
    }

    /// `Psi~^T v` for a stacked `v` of `N` blocks of length `n`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let n = self.blocks.first().map_or(0, |b| b.nrows());
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                let vi = DVector::from_column_slice(&v[i * n..(i + 1) * n]);
                (b.transpose() * vi).iter().copied().collect::<Vec<_>>()
            })
            .collect()
    }
}

pub fn tilde_psi(
    model: &dyn Regressor,
    chi_o: &[f64],
    chi_tilde: &[f64],
    dec: &LaplacianDecomposition,
    t: f64,
) -> Result<TildePsi> {
    let n = model.state_dim();
    if chi_o.len() != n || chi_tilde.len() != (dec.n_agents() - 1) * n {
        return Err(Error::shape("tilde_psi: coordinate dimensions do not match the model"));
    }
    let base = model.psi(chi_o, t);
    let sync = SyncCoords {
        chi_o: chi_o.to_vec(),
        chi_tilde: chi_tilde.to_vec(),
    };
    let x = from_sync_coords(dec, &sync)?;
    let blocks = (0..dec.n_agents())
        .map(|i| model.psi(&x[i * n..(i + 1) * n], t) - &base)
        .collect();
    Ok(TildePsi { blocks })
}

/// `xi = chi~ - (1/k) (Lambda^-1 (x) psi(chi_o, t)) vartheta~`.
pub fn xi_of(
    dec: &LaplacianDecomposition,
    chi_tilde: &[f64],
    vartheta_tilde: &[f64],
    psi_at_chi_o: &DMatrix<f64>,
    k: f64,
) -> Result<XiCoord> {
    if !(k > 0.0) {
        return Err(Error::InvalidGain(format!("xi requires k > 0, got {k}")));
    }
    let (n, p) = psi_at_chi_o.shape();
    let m = dec.n_agents() - 1;
    if chi_tilde.len() != m * n || vartheta_tilde.len() != m * p {
        return Err(Error::shape("xi_of: block sizes do not match psi"));
    }
    let mut xi = chi_tilde.to_vec();
    for j in 0..m {
        let scale = 1.0 / (k * dec.lambda[j]);
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..p {
                acc += psi_at_chi_o[(r, c)] * vartheta_tilde[j * p + c];
            }
            xi[j * n + r] -= scale * acc;
        }
    }
    Ok(XiCoord { xi })
}

/// Time derivatives of `(chi_o, chi~, vartheta_o, vartheta~)` written in the
/// transformed coordinates:
///
/// ```text
/// chi_o'      = psi(chi_o) vartheta_o + (1/N) 1^T Psi~ theta + mean psi_o
/// chi~'       = -k (Lambda (x) D) chi~ + (I (x) psi(chi_o)) vartheta~ + R^T Psi~ theta + R^T psi_o
/// vartheta_o' = -(g k / N) (1^T (x) I) Psi~^T (R (x) I)(Lambda (x) D) chi~
/// vartheta~'  = -g k (I (x) psi^T(chi_o)) (Lambda (x) D) chi~ - g k (R^T (x) I) Psi~^T (R (x) I)(Lambda (x) D) chi~
/// ```
///
/// `D` masks the coupled state components; it is the identity and `psi_o`
/// vanishes for fully coupled models without a known drift.
pub fn transformed_rhs(
    model: &dyn Regressor,
    dec: &LaplacianDecomposition,
    gains: CouplingGains,
    t: f64,
    sync: &SyncCoords,
    params: &ParamCoords,
) -> Result<(SyncCoords, ParamCoords)> {
    let (n, p) = (model.state_dim(), model.param_dim());
    let big_n = dec.n_agents();
    let m = big_n - 1;
    if sync.chi_o.len() != n || params.vartheta_o.len() != p || params.vartheta_tilde.len() != m * p {
        return Err(Error::shape(
            "transformed_rhs: coordinate dimensions do not match the model",
        ));
    }
    let psi_o_mat = model.psi(&sync.chi_o, t);
    let tp = tilde_psi(model, &sync.chi_o, &sync.chi_tilde, dec, t)?;
    let theta = from_param_coords(dec, params)?;
    let x = from_sync_coords(dec, sync)?;

    // (Lambda (x) D) chi~ and its image under (R (x) I).
    let mut lam_chi = sync.chi_tilde.clone();
    for j in 0..m {
        for r in 0..n {
            lam_chi[j * n + r] *= if model.is_coupled(r) { dec.lambda[j] } else { 0.0 };
        }
    }
    let r_lam_chi = join(dec, &vec![0.0; n], &lam_chi, n);

    let mut drift = tp.apply(&theta);
    let mut psi_o = vec![0.0; n];
    for i in 0..big_n {
        model.psi_o_into(&x[i * n..(i + 1) * n], t, &mut psi_o);
        for r in 0..n {
            drift[i * n + r] += psi_o[r];
        }
    }
    let (drift_mean, drift_tilde) = split(dec, &drift, n);

    let vo = DVector::from_column_slice(&params.vartheta_o);
    let mut d_chi_o: Vec<f64> = (&psi_o_mat * vo).iter().copied().collect();
    d_chi_o.iter_mut().zip(&drift_mean).for_each(|(a, b)| *a += b);

    let mut d_chi_tilde = drift_tilde;
    for j in 0..m {
        let vt = DVector::from_column_slice(&params.vartheta_tilde[j * p..(j + 1) * p]);
        let pv = &psi_o_mat * vt;
        for r in 0..n {
            d_chi_tilde[j * n + r] += pv[r] - gains.k * lam_chi[j * n + r];
        }
    }

    let (k, g) = (gains.k, gains.g);
    let back = tp.apply_transpose(&r_lam_chi);
    let (back_mean, back_tilde) = split(dec, &back, p);
    let d_vartheta_o: Vec<f64> = back_mean.iter().map(|v| -g * k * v).collect();
    let mut d_vartheta_tilde: Vec<f64> = back_tilde.iter().map(|v| -g * k * v).collect();
    for j in 0..m {
        let l = DVector::from_column_slice(&lam_chi[j * n..(j + 1) * n]);
        let pl = psi_o_mat.transpose() * l;
        for c in 0..p {
            d_vartheta_tilde[j * p + c] -= g * k * pl[c];
        }
    }

    Ok((
        SyncCoords {
            chi_o: d_chi_o,
            chi_tilde: d_chi_tilde,
        },
        ParamCoords {
            vartheta_o: d_vartheta_o,
            vartheta_tilde: d_vartheta_tilde,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::ScalarLinearSine;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn consensus_state_has_no_disagreement() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let c = to_sync_coords(&dec, &[1.0, 1.0, 1.0], 1).unwrap();
        assert_relative_eq!(c.chi_o[0], 1.0);
        assert!(c.norm_tilde() < 1e-15);
    }

    #[test]
    fn ring_disagreement_norm() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let c = to_sync_coords(&dec, &[2.0, 0.0, 1.0], 1).unwrap();
        assert_relative_eq!(c.chi_o[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.norm_tilde(), 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn two_node_projection() {
        let dec = Graph::path(2).unwrap().decompose().unwrap();
        let (a, b) = (3.0, -1.0);
        let c = to_sync_coords(&dec, &[a, b], 1).unwrap();
        assert_relative_eq!(c.chi_o[0], (a + b) / 2.0);
        assert_relative_eq!(c.chi_tilde[0].abs(), (a - b) / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn inverse_examples() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let x = from_sync_coords(
            &dec,
            &SyncCoords {
                chi_o: vec![1.0],
                chi_tilde: vec![0.0, 0.0],
            },
        )
        .unwrap();
        assert_eq!(x, vec![1.0; 3]);
        let x = from_sync_coords(
            &dec,
            &SyncCoords {
                chi_o: vec![0.0],
                chi_tilde: vec![1.0, 0.0],
            },
        )
        .unwrap();
        for (i, xi) in x.iter().enumerate() {
            assert_relative_eq!(*xi, dec.r_matrix[(i, 0)], epsilon = 1e-15);
        }
    }

    #[test]
    fn param_mean() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let pc = to_param_coords(&dec, &[1.5, 0.8, 1.0, 1.2, 0.5, 1.0], 2).unwrap();
        assert_relative_eq!(pc.vartheta_o[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(pc.vartheta_o[1], 1.0, epsilon = 1e-15);
        let same = to_param_coords(&dec, &[0.3, 0.4, 0.3, 0.4, 0.3, 0.4], 2).unwrap();
        assert!(same.norm_tilde() < 1e-15);
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let big_n = rng.random_range(2..=8);
            let dim = rng.random_range(1..=3);
            let dec = Graph::complete(big_n).unwrap().decompose().unwrap();
            let v: Vec<f64> = (0..big_n * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let back = from_sync_coords(&dec, &to_sync_coords(&dec, &v, dim).unwrap()).unwrap();
            let back_p = from_param_coords(&dec, &to_param_coords(&dec, &v, dim).unwrap()).unwrap();
            let scale = norm(&v);
            for ((a, b), c) in v.iter().zip(&back).zip(&back_p) {
                assert!((a - b).abs() <= 1e-12 * scale);
                assert!((a - c).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn tilde_psi_scalar_model() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let zero = tilde_psi(&ScalarLinearSine, &[0.4], &[0.0, 0.0], &dec, 1.0).unwrap();
        assert_eq!(zero.norm(), 0.0);

        let chi_tilde = [0.3, -0.7];
        let tp = tilde_psi(&ScalarLinearSine, &[0.4], &chi_tilde, &dec, 1.0).unwrap();
        for i in 0..3 {
            let ri: f64 = (0..2).map(|j| dec.r_matrix[(i, j)] * chi_tilde[j]).sum();
            assert_relative_eq!(tp.blocks[i][(0, 0)], -ri, epsilon = 1e-14);
            assert_relative_eq!(tp.blocks[i][(0, 1)], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn tilde_psi_lipschitz_by_sampling() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        let l = dec.max_row_norm();
        assert!(l <= 1.0 + 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let chi_o = [rng.random_range(-3.0..3.0)];
            let chi_tilde = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let t = rng.random_range(0.0..10.0);
            let tp = tilde_psi(&ScalarLinearSine, &chi_o, &chi_tilde, &dec, t).unwrap();
            assert!(tp.norm() <= l * norm(&chi_tilde) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn xi_examples() {
        let dec = Graph::path(2).unwrap().decompose().unwrap();
        let psi = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let xi = xi_of(&dec, &[1.0], &[4.0, 0.0], &psi, 2.0).unwrap();
        assert_relative_eq!(xi.xi[0], 0.0, epsilon = 1e-15);

        let xi = xi_of(&dec, &[0.3], &[0.0, 0.0], &psi, 2.0).unwrap();
        assert_eq!(xi.xi, vec![0.3]);

        let vt = [1.0, -2.0];
        for k in [1.0, 10.0, 1e3, 1e6] {
            let xi = xi_of(&dec, &[0.3], &vt, &psi, k).unwrap();
            let bound = (1.0 / dec.lambda2()) * spectral_norm(&psi) * norm(&vt) / k;
            assert!((xi.xi[0] - 0.3).abs() <= bound * (1.0 + 1e-12));
        }
        assert!(matches!(
            xi_of(&dec, &[0.3], &vt, &psi, 0.0),
            Err(Error::InvalidGain(_))
        ));
    }

    #[test]
    fn transformed_rhs_matches_network_rhs() {
        use crate::model::{network_rhs, CouplingGains, NetworkState, VanDerPolCompanion};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::path(4).unwrap();
        let dec = g.decompose().unwrap();
        let gains = CouplingGains::new(7.0, 0.3).unwrap();
        for model in [&ScalarLinearSine as &dyn Regressor, &VanDerPolCompanion] {
            let (n, p) = (model.state_dim(), model.param_dim());
            let x: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let th: Vec<f64> = (0..4 * p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = 0.37;
            let state = NetworkState::new(t, n, p, x.clone(), th.clone()).unwrap();
            let d = network_rhs(model, &g, &state, gains).unwrap();
            let want_sync = to_sync_coords(&dec, &d.x, n).unwrap();
            let want_par = to_param_coords(&dec, &d.theta, p).unwrap();
            let (ds, dp) = transformed_rhs(
                model,
                &dec,
                gains,
                t,
                &to_sync_coords(&dec, &x, n).unwrap(),
                &to_param_coords(&dec, &th, p).unwrap(),
            )
            .unwrap();
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-10 * (1.0 + v.abs()));
            assert!(close(&ds.chi_o, &want_sync.chi_o));
            assert!(close(&ds.chi_tilde, &want_sync.chi_tilde));
            assert!(close(&dp.vartheta_o, &want_par.vartheta_o));
            assert!(close(&dp.vartheta_tilde, &want_par.vartheta_tilde));
        }
    }
}
