//! Static SVG figures.

use std::path::Path;

use plotters::prelude::*;

use super::config::PlotGroup;
use super::table::Table;
use crate::error::{Error, Result};

struct Curve {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Panel {
    title: String,
    log_y: bool,
    curves: Vec<Curve>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// At most ~2000 points per curve.
fn stride(len: usize) -> usize {
    (len / 2000).max(1)
}

fn series(table: &Table, f: impl Fn(usize) -> f64) -> Vec<(f64, f64)> {
    (0..table.len())
        .step_by(stride(table.len()))
        .map(|j| (table.times[j], f(j)))
        .collect()
}

fn panels(table: &Table, groups: &[PlotGroup]) -> Vec<Panel> {
    let (big_n, n, p) = (table.n_agents, table.state_dim, table.param_dim);
    let mut out = Vec::new();
    for group in groups {
        match group {
            PlotGroup::States => {
                for c in 0..n {
                    out.push(Panel {
                        title: format!("state component {}", c + 1),
                        log_y: false,
                        curves: (0..big_n)
                            .map(|i| Curve {
                                label: format!("agent {}", i + 1),
                                points: series(table, |j| table.x[j][i * n + c]),
                            })
                            .chain(std::iter::once(Curve {
                                label: "blended s".into(),
                                points: series(table, |j| table.s[j][c]),
                            }))
                            .collect(),
                    });
                }
            }
            PlotGroup::Theta => {
                for c in 0..p {
                    out.push(Panel {
                        title: format!("theta component {}", c + 1),
                        log_y: false,
                        curves: (0..big_n)
                            .map(|i| Curve {
                                label: format!("agent {}", i + 1),
                                points: series(table, |j| table.theta[j][i * p + c]),
                            })
                            .collect(),
                    });
                }
            }
            PlotGroup::Errors => {
                let floor = 1e-16;
                let mut curves = vec![
                    Curve {
                        label: "max |x_i - s|".into(),
                        points: series(table, |j| table.sync_err[j].max(floor)),
                    },
                    Curve {
                        label: "max |theta_i - vartheta_o|".into(),
                        points: series(table, |j| table.param_err[j].max(floor)),
                    },
                    Curve {
                        label: "|chi~|".into(),
                        points: series(table, |j| table.norm_chi_tilde[j].max(floor)),
                    },
                ];
                if table.norm_xi.iter().all(Option::is_some) {
                    curves.push(Curve {
                        label: "|xi|".into(),
                        points: series(table, |j| table.norm_xi[j].unwrap_or(0.0).max(floor)),
                    });
                }
                out.push(Panel {
                    title: "error norms".into(),
                    log_y: true,
                    curves,
                });
            }
        }
    }
    out
}

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        msg: format!("plot: {e}"),
    }
}

fn y_range(panel: &Panel) -> (f64, f64) {
    let (lo, hi) = panel
        .curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if panel.log_y {
        return (lo, hi.max(lo * 10.0));
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Writes one panel per requested signal group and returns the panel count.
pub fn emit_plot(table: &Table, groups: &[PlotGroup], path: &Path) -> Result<usize> {
    if groups.is_empty() || table.is_empty() {
        return Err(Error::EmptySelection);
    }
    let panels = panels(table, groups);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let height = 320 * panels.len() as u32;
    let root = SVGBackend::new(path, (900, height)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let areas = root.split_evenly((panels.len(), 1));
    let t_end = *table.times.last().unwrap();
    let t_start = table.times[0];

    for (panel, area) in panels.iter().zip(areas.iter()) {
        let (lo, hi) = y_range(panel);
        let mut builder = ChartBuilder::on(area);
        builder
            .caption(&panel.title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(64);
        macro_rules! draw {
            ($chart:expr) => {{
                let mut chart = $chart;
                chart
                    .configure_mesh()
                    .x_desc("t")
                    .light_line_style(WHITE.mix(0.0))
                    .draw()
                    .map_err(draw_err(path))?;
                for (i, curve) in panel.curves.iter().enumerate() {
                    let color = PALETTE[i % PALETTE.len()];
                    chart
                        .draw_series(LineSeries::new(
                            curve.points.iter().copied(),
                            color.stroke_width(2),
                        ))
                        .map_err(draw_err(path))?
                        .label(curve.label.clone())
                        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
                }
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.8))
                    .border_style(BLACK)
                    .draw()
                    .map_err(draw_err(path))?;
            }};
        }
        if panel.log_y {
            draw!(builder
                .build_cartesian_2d(t_start..t_end, (lo..hi).log_scale())
                .map_err(draw_err(path))?);
        } else {
            draw!(builder
                .build_cartesian_2d(t_start..t_end, lo..hi)
                .map_err(draw_err(path))?);
        }
    }
    root.present().map_err(draw_err(path))?;
    Ok(panels.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::{CouplingGains, NetworkState, ScalarLinearSine};
    use crate::simulation::{simulate, IntegratorConfig};

    fn table() -> Table {
        let initial = NetworkState::from_blocks(
            0.0,
            &[vec![1.0], vec![-0.5], vec![0.3]],
            &[vec![1.5, 0.8], vec![1.0, 1.2], vec![0.5, 1.0]],
        )
        .unwrap();
        let traj = simulate(
            &ScalarLinearSine,
            &Graph::ring(3).unwrap(),
            &initial,
            CouplingGains::tied(20.0).unwrap(),
            &IntegratorConfig::new(0.005, 5.0).record_every(4),
        )
        .unwrap();
        Table::from_trajectory(&traj)
    }

    #[test]
    fn theta_panels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.svg");
        let t = table();
        assert_eq!(emit_plot(&t, &[PlotGroup::Theta], &path).unwrap(), 2);
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        // Data lines are drawn at width 2; each has a matching legend swatch.
        let lines = svg
            .lines()
            .filter(|l| l.contains("<polyline") && l.contains("stroke-width=\"2\""));
        assert_eq!(lines.count(), 2 * 3 * 2);
        assert!(svg.contains("theta component 2"));
    }

    #[test]
    fn all_groups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("all.svg");
        let n = emit_plot(
            &table(),
            &[PlotGroup::States, PlotGroup::Theta, PlotGroup::Errors],
            &path,
        )
        .unwrap();
        assert_eq!(n, 1 + 2 + 1);
    }

    #[test]
    fn empty_selection() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_plot(&table(), &[], &dir.path().join("x.svg")),
            Err(Error::EmptySelection)
        ));
    }
}
