//! Test-only oracles, written against dense Kronecker products so they share
//! no code with the block-wise library routines.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use vfc_core::{LaplacianDecomposition, Regressor};

pub struct Coords {
    pub chi_o: DVector<f64>,
    pub chi_tilde: DVector<f64>,
    pub vartheta_o: DVector<f64>,
    pub vartheta_tilde: DVector<f64>,
}

impl Coords {
    pub fn flat(&self) -> Vec<f64> {
        [
            self.chi_o.as_slice(),
            self.chi_tilde.as_slice(),
            self.vartheta_o.as_slice(),
            self.vartheta_tilde.as_slice(),
        ]
        .concat()
    }

    pub fn from_flat(y: &[f64], n: usize, p: usize, m: usize) -> Self {
        Self {
            chi_o: DVector::from_column_slice(&y[..n]),
            chi_tilde: DVector::from_column_slice(&y[n..n + m * n]),
            vartheta_o: DVector::from_column_slice(&y[n + m * n..n + m * n + p]),
            vartheta_tilde: DVector::from_column_slice(&y[n + m * n + p..]),
        }
    }
}

fn ones(len: usize) -> DMatrix<f64> {
    DMatrix::from_element(len, 1, 1.0)
}

/// `(1 (x) I) chi_o + (R (x) I) chi~`.
pub fn stacked(dec: &LaplacianDecomposition, mean: &DVector<f64>, tilde: &DVector<f64>) -> DVector<f64> {
    let big_n = dec.laplacian.nrows();
    let d = mean.len();
    let eye = DMatrix::<f64>::identity(d, d);
    ones(big_n).kronecker(&eye) * mean + dec.r_matrix.kronecker(&eye) * tilde
}

/// Right-hand side of the network written in consensus/disagreement
/// coordinates, with every Kronecker product formed explicitly.
pub fn dense_transformed_rhs(
    model: &dyn Regressor,
    dec: &LaplacianDecomposition,
    k: f64,
    g: f64,
    t: f64,
    c: &Coords,
) -> Coords {
    let (n, p) = (model.state_dim(), model.param_dim());
    let big_n = dec.laplacian.nrows();
    let r = &dec.r_matrix;
    let lambda = DMatrix::from_diagonal(&dec.lambda);
    let i_n = DMatrix::<f64>::identity(n, n);
    let i_p = DMatrix::<f64>::identity(p, p);
    let i_m = DMatrix::<f64>::identity(big_n - 1, big_n - 1);
    let d_mask = DMatrix::from_fn(n, n, |a, b| if a == b && model.is_coupled(a) { 1.0 } else { 0.0 });

    let x = stacked(dec, &c.chi_o, &c.chi_tilde);
    let theta = stacked(dec, &c.vartheta_o, &c.vartheta_tilde);
    let psi_o = model.psi(c.chi_o.as_slice(), t);

    let mut tilde_psi = DMatrix::<f64>::zeros(big_n * n, big_n * p);
    let mut drift = DVector::<f64>::zeros(big_n * n);
    for i in 0..big_n {
        let xi = x.rows(i * n, n).clone_owned();
        let block = model.psi(xi.as_slice(), t) - &psi_o;
        tilde_psi.view_mut((i * n, i * p), (n, p)).copy_from(&block);
        drift.rows_mut(i * n, n).copy_from(&model.psi_o(xi.as_slice(), t));
    }
    let forcing = &tilde_psi * &theta + drift;
    let lam_d = lambda.kronecker(&d_mask);
    let coupling = r.kronecker(&i_n) * &lam_d * &c.chi_tilde;
    let inv_n = 1.0 / big_n as f64;

    let chi_o = &psi_o * &c.vartheta_o + ones(big_n).transpose().kronecker(&i_n) * &forcing * inv_n;
    let chi_tilde = -(&lam_d * &c.chi_tilde) * k
        + i_m.kronecker(&psi_o) * &c.vartheta_tilde
        + r.transpose().kronecker(&i_n) * &forcing;
    let vartheta_o = -(ones(big_n).transpose().kronecker(&i_p) * tilde_psi.transpose() * &coupling) * (g * k * inv_n);
    let vartheta_tilde = -(i_m.kronecker(&psi_o.transpose()) * &lam_d * &c.chi_tilde) * (g * k)
        - (r.transpose().kronecker(&i_p) * tilde_psi.transpose() * &coupling) * (g * k);
    Coords {
        chi_o,
        chi_tilde,
        vartheta_o,
        vartheta_tilde,
    }
}

/// Classical RK4 on `y' = f(t, y)` over `steps` steps of size `h`, calling
/// `visit` after every step.
pub fn rk4(
    mut f: impl FnMut(f64, &[f64]) -> Vec<f64>,
    y0: Vec<f64>,
    h: f64,
    steps: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let axpy = |y: &[f64], a: f64, k: &[f64]| y.iter().zip(k).map(|(y, k)| y + a * k).collect::<Vec<_>>();
    let mut y = y0;
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = f(t + h, &axpy(&y, h, &k3));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        visit(s + 1, &y);
    }
    y
}
