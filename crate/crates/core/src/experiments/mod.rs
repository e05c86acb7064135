//! Scenario configuration, persisted outputs and the reproduction harness.

pub mod analyze;
pub mod config;
pub mod criteria;
pub mod plot;
pub mod report;
pub mod table;

use std::path::{Path, PathBuf};

pub use analyze::{analyze, AnalyzeReport};
pub use config::{load_config, PlotGroup, ScenarioConfig, Thresholds, PRESETS};
pub use criteria::{repro_all, CriterionResult, ReproOptions, Summary};
pub use plot::emit_plot;
pub use report::{Check, RunReport};
pub use table::{emit_csv, Table};

use crate::error::{Error, Result};
use crate::simulation::{simulate, Trajectory};

/// Paths written by [`run_scenario`].
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

/// Integrates a scenario and scores it against its thresholds.
pub fn run(cfg: &ScenarioConfig) -> Result<(Trajectory, RunReport)> {
    let traj = simulate(
        cfg.model.as_ref(),
        &cfg.graph,
        &cfg.initial_state()?,
        cfg.gains,
        &cfg.integrator(),
    )?;
    let report = RunReport::compute(&cfg.name, &Table::from_trajectory(&traj), &cfg.thresholds);
    Ok((traj, report))
}

/// [`run`] plus the configured CSV and SVG files under `out_dir`.
///
/// On blowup the partial trajectory is still written before the error is
/// returned.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<(Trajectory, RunReport, Outputs)> {
    let csv_path = cfg.outputs.csv.as_ref().map(|p| out_dir.join(p));
    let result = simulate(
        cfg.model.as_ref(),
        &cfg.graph,
        &cfg.initial_state()?,
        cfg.gains,
        &cfg.integrator(),
    );
    let traj = match result {
        Ok(t) => t,
        Err(Error::NumericalBlowup { t, partial }) => {
            if let (Some(path), Some(p)) = (&csv_path, partial.as_deref()) {
                if !p.is_empty() {
                    emit_csv(p, path)?;
                }
            }
            return Err(Error::NumericalBlowup { t, partial });
        }
        Err(e) => return Err(e),
    };
    let table = Table::from_trajectory(&traj);
    let mut outputs = Outputs::default();
    if let Some(path) = csv_path {
        table.write_csv(&path)?;
        outputs.csv = Some(path);
    }
    if let Some(p) = &cfg.outputs.plot {
        let path = out_dir.join(p);
        emit_plot(&table, &cfg.outputs.plot_groups, &path)?;
        outputs.plot = Some(path);
    }
    let report = RunReport::compute(&cfg.name, &table, &cfg.thresholds);
    Ok((traj, report, outputs))
}
