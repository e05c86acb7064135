//! Undirected communication graphs and the Laplacian decomposition
//! `L = R diag(lambda) R^T` with `R^T R = I`, `R^T 1 = 0`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as zero when testing connectivity.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// Unweighted undirected graph on `n_agents` nodes.
///
/// Edges are stored once as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, out-of-range endpoints and
    /// duplicate edges (in either orientation).
    pub fn new(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::shape("a graph needs at least one agent"));
        }
        let mut seen = BTreeSet::new();
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidEdge(i, j, "self-loop"));
            }
            if i >= n_agents || j >= n_agents {
                return Err(Error::InvalidEdge(i, j, "endpoint out of range"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidEdge(i, j, "duplicate edge"));
            }
        }
        Ok(Self {
            n_agents,
            edges: seen.into_iter().collect(),
        })
    }

    /// Cycle `0 - 1 - ... - (N-1) - 0`. Degenerates to a path for `N = 2`.
    pub fn ring(n_agents: usize) -> Result<Self> {
        let mut edges: Vec<_> = (0..n_agents.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if n_agents >= 3 {
            edges.push((n_agents - 1, 0));
        }
        Self::new(n_agents, &edges)
    }

    pub fn path(n_agents: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n_agents.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Self::new(n_agents, &edges)
    }

    pub fn complete(n_agents: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                edges.push((i, j));
            }
        }
        Self::new(n_agents, &edges)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Neighbor lists, indexed by agent.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_agents];
        for &(i, j) in &self.edges {
            out[i].push(j);
            out[j].push(i);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    /// `L = D - A`. Entries are accumulated as integers, so row sums are
    /// exactly zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_agents;
        let mut int_lap = vec![0i64; n * n];
        for &(i, j) in &self.edges {
            int_lap[i * n + i] += 1;
            int_lap[j * n + j] += 1;
            int_lap[i * n + j] -= 1;
            int_lap[j * n + i] -= 1;
        }
        DMatrix::from_row_iterator(n, n, int_lap.into_iter().map(|v| v as f64))
    }

    /// Breadth-first connectivity test (independent of the spectrum).
    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut visited = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n_agents
    }

    /// Spectral decomposition of the Laplacian; see [`LaplacianDecomposition`].
    pub fn decompose(&self) -> Result<LaplacianDecomposition> {
        LaplacianDecomposition::new(self)
    }
}

/// `L = R diag(lambda) R^T` where the columns of `R` span the orthogonal
/// complement of `1_N`.
///
/// `lambda` is ascending. Each column of `R` is signed so that its first
/// component with magnitude above `1e-12` is positive. Inside degenerate
/// eigenspaces the basis is whatever the eigensolver returns.
#[derive(Debug, Clone)]
pub struct LaplacianDecomposition {
    pub laplacian: DMatrix<f64>,
    /// `N x (N-1)`.
    pub r_matrix: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl LaplacianDecomposition {
    fn new(graph: &Graph) -> Result<Self> {
        let n = graph.n_agents();
        let laplacian = graph.laplacian();
        if n == 1 {
            return Ok(Self {
                laplacian,
                r_matrix: DMatrix::zeros(1, 0),
                lambda: DVector::zeros(0),
            });
        }

        let eig = SymmetricEigen::new(laplacian.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        // Drop the consensus direction (smallest eigenvalue).
        let kept = &order[1..];
        let lambda = DVector::from_iterator(n - 1, kept.iter().map(|&c| eig.eigenvalues[c]));
        if lambda[0] < CONNECTIVITY_TOL {
            return Err(Error::NotConnected(lambda[0]));
        }

        // Re-orthonormalize against 1_N and each other (modified Gram-Schmidt).
        let mut r_matrix = DMatrix::zeros(n, n - 1);
        for (col, &src) in kept.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            let mean = v.mean();
            v.add_scalar_mut(-mean);
            for prev in 0..col {
                let q = r_matrix.column(prev);
                let proj = q.dot(&v);
                v.axpy(-proj, &q, 1.0);
            }
            v /= v.norm();
            if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            r_matrix.set_column(col, &v);
        }

        Ok(Self {
            laplacian,
            r_matrix,
            lambda,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.laplacian.nrows()
    }

    /// Smallest nonzero Laplacian eigenvalue; `0` for a single agent.
    pub fn lambda2(&self) -> f64 {
        self.lambda.iter().copied().next().unwrap_or(0.0)
    }

    /// Largest Laplacian eigenvalue; `0` for a single agent.
    pub fn lambda_n(&self) -> f64 {
        self.lambda.iter().copied().last().unwrap_or(0.0)
    }

    /// Row `i` of `R`.
    pub fn r_row(&self, i: usize) -> Vec<f64> {
        self.r_matrix.row(i).iter().copied().collect()
    }

    /// `max_i ||r_i||`, at most one.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.n_agents())
            .map(|i| self.r_matrix.row(i).norm())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn invariants(dec: &LaplacianDecomposition) {
        let n = dec.n_agents();
        let r = &dec.r_matrix;
        let rtr = r.transpose() * r;
        assert!((rtr - DMatrix::identity(n - 1, n - 1)).amax() < 1e-10);
        let ones = DVector::from_element(n, 1.0);
        assert!((r.transpose() * ones).amax() < 1e-10);
        let rebuilt = r * DMatrix::from_diagonal(&dec.lambda) * r.transpose();
        assert!((rebuilt - &dec.laplacian).amax() < 1e-9);
        assert!(dec.lambda.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn builds_ring_and_path() {
        let ring = Graph::new(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(ring.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(ring.has_edge(2, 0));
        assert_eq!(ring, Graph::ring(3).unwrap());
        let path = Graph::new(2, &[(0, 1)]).unwrap();
        assert_eq!(path, Graph::path(2).unwrap());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(Graph::new(3, &[(0, 0)]), Err(Error::InvalidEdge(0, 0, _))));
        assert!(matches!(Graph::new(3, &[(0, 3)]), Err(Error::InvalidEdge(..))));
        assert!(matches!(Graph::new(3, &[(0, 1), (1, 0)]), Err(Error::InvalidEdge(..))));
    }

    #[test]
    fn laplacians() {
        let ring = Graph::ring(3).unwrap().laplacian();
        let expected = DMatrix::from_row_slice(3, 3, &[2., -1., -1., -1., 2., -1., -1., -1., 2.]);
        assert_eq!(ring, expected);
        let path = Graph::path(2).unwrap().laplacian();
        assert_eq!(path, DMatrix::from_row_slice(2, 2, &[1., -1., -1., 1.]));
        let k4 = Graph::complete(4).unwrap().laplacian();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k4[(i, j)], if i == j { 3.0 } else { -1.0 });
            }
            assert_eq!(k4.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn ring3_spectrum() {
        let dec = Graph::ring(3).unwrap().decompose().unwrap();
        assert_relative_eq!(dec.lambda[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(dec.lambda[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(dec.lambda2(), dec.lambda_n(), epsilon = 1e-12);
        invariants(&dec);
        // basis-independent: ||r_i||^2 = 1 - 1/N
        for i in 0..3 {
            assert_relative_eq!(dec.r_matrix.row(i).norm_squared(), 2.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn path2_spectrum() {
        let dec = Graph::path(2).unwrap().decompose().unwrap();
        assert_relative_eq!(dec.lambda[0], 2.0, epsilon = 1e-12);
        let h = 1.0 / 2f64.sqrt();
        assert_relative_eq!(dec.r_matrix[(0, 0)], h, epsilon = 1e-12);
        assert_relative_eq!(dec.r_matrix[(1, 0)], -h, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_is_rejected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(g.decompose(), Err(Error::NotConnected(_))));
        assert!(!g.is_connected());
    }

    #[test]
    fn connectivity_by_search() {
        assert!(Graph::ring(3).unwrap().is_connected());
        assert!(!Graph::new(4, &[(0, 1)]).unwrap().is_connected());
        assert!(Graph::new(1, &[]).unwrap().is_connected());
    }

    #[test]
    fn single_agent_decomposition_is_empty() {
        let dec = Graph::new(1, &[]).unwrap().decompose().unwrap();
        assert_eq!(dec.r_matrix.shape(), (1, 0));
        assert_eq!(dec.lambda2(), 0.0);
    }

    #[test]
    fn complete_and_path_invariants() {
        for n in 2..=8 {
            invariants(&Graph::complete(n).unwrap().decompose().unwrap());
            invariants(&Graph::path(n).unwrap().decompose().unwrap());
            invariants(&Graph::ring(n).unwrap().decompose().unwrap());
        }
    }
}
