//! Flat per-sample view of a trajectory, as persisted in CSV.
//!
//! Columns: `t`, `x_i_j`, `theta_i_j`, `chi_o_j`, `norm_chi_tilde`,
//! `vartheta_o_j`, `norm_vartheta_tilde`, `norm_xi`, `s_j`, `sync_err`,
//! `param_err`. Floats carry 17 significant digits; `norm_xi` is empty
//! when `k = 0`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::simulation::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub n_agents: usize,
    pub state_dim: usize,
    pub param_dim: usize,
    pub times: Vec<f64>,
    /// Stacked agent states per sample.
    pub x: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub chi_o: Vec<Vec<f64>>,
    pub norm_chi_tilde: Vec<f64>,
    pub vartheta_o: Vec<Vec<f64>>,
    pub norm_vartheta_tilde: Vec<f64>,
    pub norm_xi: Vec<Option<f64>>,
    pub s: Vec<Vec<f64>>,
    pub sync_err: Vec<f64>,
    pub param_err: Vec<f64>,
}

impl Table {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let d = &traj.derived;
        Self {
            n_agents: traj.n_agents,
            state_dim: traj.state_dim,
            param_dim: traj.param_dim,
            times: traj.times.clone(),
            x: traj.states.iter().map(|s| s.x.clone()).collect(),
            theta: traj.states.iter().map(|s| s.theta.clone()).collect(),
            chi_o: d.iter().map(|d| d.sync.chi_o.clone()).collect(),
            norm_chi_tilde: d.iter().map(|d| d.sync.norm_tilde()).collect(),
            vartheta_o: d.iter().map(|d| d.params.vartheta_o.clone()).collect(),
            norm_vartheta_tilde: d.iter().map(|d| d.params.norm_tilde()).collect(),
            norm_xi: d.iter().map(|d| d.xi.as_ref().map(|x| x.norm())).collect(),
            s: traj.blended.clone(),
            sync_err: d.iter().map(|d| d.sync_err).collect(),
            param_err: d.iter().map(|d| d.param_err).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_i |x_i - chi_o|` at sample `j`.
    pub fn disagreement(&self, j: usize) -> f64 {
        let n = self.state_dim;
        (0..self.n_agents)
            .map(|i| {
                let d: Vec<f64> = (0..n).map(|c| self.x[j][i * n + c] - self.chi_o[j][c]).collect();
                norm(&d)
            })
            .fold(0.0, f64::max)
    }

    pub fn header(&self) -> Vec<String> {
        let (big_n, n, p) = (self.n_agents, self.state_dim, self.param_dim);
        let mut h = vec!["t".to_string()];
        for i in 0..big_n {
            h.extend((0..n).map(|j| format!("x_{i}_{j}")));
        }
        for i in 0..big_n {
            h.extend((0..p).map(|j| format!("theta_{i}_{j}")));
        }
        h.extend((0..n).map(|j| format!("chi_o_{j}")));
        h.push("norm_chi_tilde".into());
        h.extend((0..p).map(|j| format!("vartheta_o_{j}")));
        h.push("norm_vartheta_tilde".into());
        h.push("norm_xi".into());
        h.extend((0..n).map(|j| format!("s_{j}")));
        h.push("sync_err".into());
        h.push("param_err".into());
        h
    }

    fn row(&self, j: usize) -> Vec<String> {
        let f = |v: f64| format!("{v:.16e}");
        let mut r = vec![f(self.times[j])];
        r.extend(self.x[j].iter().map(|&v| f(v)));
        r.extend(self.theta[j].iter().map(|&v| f(v)));
        r.extend(self.chi_o[j].iter().map(|&v| f(v)));
        r.push(f(self.norm_chi_tilde[j]));
        r.extend(self.vartheta_o[j].iter().map(|&v| f(v)));
        r.push(f(self.norm_vartheta_tilde[j]));
        r.push(self.norm_xi[j].map(f).unwrap_or_default());
        r.extend(self.s[j].iter().map(|&v| f(v)));
        r.push(f(self.sync_err[j]));
        r.push(f(self.param_err[j]));
        r
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySelection);
        }
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            msg: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(self.header()).map_err(csv_err)?;
        for j in 0..self.len() {
            w.write_record(self.row(j)).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            msg,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n, p) = (count("chi_o_"), count("vartheta_o_"));
        if n == 0 || p == 0 || count("x_") % n != 0 {
            return Err(bad("header does not describe a trajectory".into()));
        }
        let big_n = count("x_") / n;
        let mut table = Table {
            n_agents: big_n,
            state_dim: n,
            param_dim: p,
            times: Vec::new(),
            x: Vec::new(),
            theta: Vec::new(),
            chi_o: Vec::new(),
            norm_chi_tilde: Vec::new(),
            vartheta_o: Vec::new(),
            norm_vartheta_tilde: Vec::new(),
            norm_xi: Vec::new(),
            s: Vec::new(),
            sync_err: Vec::new(),
            param_err: Vec::new(),
        };
        if table.header() != header {
            return Err(bad("unexpected column layout".into()));
        }
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: column {}: {e}", line + 2, header[i])))
            };
            let mut col = 0usize;
            let mut take = |len: usize| -> Result<Vec<f64>> {
                let v = (col..col + len).map(parse).collect::<Result<Vec<_>>>()?;
                col += len;
                Ok(v)
            };
            table.times.push(take(1)?[0]);
            table.x.push(take(big_n * n)?);
            table.theta.push(take(big_n * p)?);
            table.chi_o.push(take(n)?);
            table.norm_chi_tilde.push(take(1)?[0]);
            table.vartheta_o.push(take(p)?);
            table.norm_vartheta_tilde.push(take(1)?[0]);
            let xi_col = 1 + big_n * (n + p) + n + 1 + p + 1;
            table.norm_xi.push(if rec[xi_col].is_empty() {
                None
            } else {
                Some(parse(xi_col)?)
            });
            col = xi_col + 1;
            table.s.push((col..col + n).map(parse).collect::<Result<Vec<_>>>()?);
            col += n;
            table.sync_err.push(parse(col)?);
            table.param_err.push(parse(col + 1)?);
        }
        Ok(table)
    }
}

/// Writes the trajectory as CSV.
pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    Table::from_trajectory(traj).write_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::{CouplingGains, NetworkState, ScalarLinearSine};
    use crate::simulation::{simulate, IntegratorConfig};

    fn small_run(k: f64, g: f64) -> Trajectory {
        let initial = NetworkState::from_blocks(
            0.0,
            &[vec![1.0], vec![-0.5], vec![0.3]],
            &[vec![1.5, 0.8], vec![1.0, 1.2], vec![0.5, 1.0]],
        )
        .unwrap();
        simulate(
            &ScalarLinearSine,
            &Graph::ring(3).unwrap(),
            &initial,
            CouplingGains::new(k, g).unwrap(),
            &IntegratorConfig::new(0.01, 2.0).record_every(10),
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let t = Table::from_trajectory(&small_run(5.0, 0.4));
        let h = t.header();
        assert_eq!(h.first().unwrap(), "t");
        assert_eq!(h[1], "x_0_0");
        assert_eq!(h[4], "theta_0_0");
        assert_eq!(&h[h.len() - 2..], ["sync_err", "param_err"]);
        assert_eq!(h.len(), 1 + 3 + 6 + 1 + 1 + 2 + 1 + 1 + 1 + 2);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (k, g) in [(5.0, 0.4), (0.0, 0.0)] {
            let t = Table::from_trajectory(&small_run(k, g));
            let path = dir.path().join(format!("run_{k}.csv"));
            t.write_csv(&path).unwrap();
            assert_eq!(Table::read_csv(&path).unwrap(), t);
        }
    }

    #[test]
    fn deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_csv(&small_run(5.0, 0.4), &a).unwrap();
        emit_csv(&small_run(5.0, 0.4), &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn io_error_has_path() {
        let t = Table::from_trajectory(&small_run(5.0, 0.4));
        let err = t.write_csv(Path::new("/proc/no/such/dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/proc/no/such/dir"));
    }
}
