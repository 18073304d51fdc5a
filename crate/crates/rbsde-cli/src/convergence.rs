//! Convergence studies: rerun a scenario along one axis, doubling the
//! axis value each point, and tabulate the change of the headline value.

use std::error::Error;
use std::path::Path;

use crate::config::{ResolvedConfig, Scenario};
use crate::report::{fmt, write_csv, Check, Summary};
use crate::scenarios;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Steps,
    Paths,
    SpaceNodes,
    Penalty,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "N" => Ok(Axis::Steps),
            "M" => Ok(Axis::Paths),
            "nx" => Ok(Axis::SpaceNodes),
            "penalty" => Ok(Axis::Penalty),
            other => Err(format!("unknown axis '{other}' (expected N, M, nx or penalty)")),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Axis::Steps => "N",
            Axis::Paths => "M",
            Axis::SpaceNodes => "nx",
            Axis::Penalty => "penalty",
        }
    }
}

fn headline(summary: &Summary) -> Option<f64> {
    for key in ["u00", "y0_final", "y0_lsmc", "y0"] {
        if let Some(v) = summary.results.get(key).and_then(|v| v.as_f64()) {
            return Some(v);
        }
    }
    None
}

/// Runs the scenario at `points` doublings of the axis and writes the
/// convergence table. The run passes when the final delta is no larger
/// than the first (refinement does not diverge).
pub fn run_study(base: &ResolvedConfig, axis: Axis, points: usize, quiet: bool) -> scenarios::RunResult {
    if points < 2 {
        return Err(Box::<dyn Error>::from("converge needs at least 2 points"));
    }
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    let mut prev: Option<f64> = None;
    let out_base = base.out_dir.clone();

    for k in 0..points {
        let factor = 1usize << k;
        let mut cfg = base.clone();
        cfg.out_dir = format!("{out_base}/point{k}");
        let axis_value = match axis {
            Axis::Steps => {
                cfg.steps = base.steps * factor;
                cfg.steps as f64
            }
            Axis::Paths => {
                cfg.paths = base.paths * factor;
                cfg.paths as f64
            }
            Axis::SpaceNodes => {
                cfg.space_nodes = (base.space_nodes - 1) * factor + 1;
                cfg.space_nodes as f64
            }
            Axis::Penalty => {
                if base.scenario != Scenario::Penalized {
                    return Err(Box::<dyn Error>::from(
                        "axis 'penalty' needs a penalized scenario",
                    ));
                }
                let level = base
                    .penalty
                    .levels
                    .as_ref()
                    .and_then(|l| l.first().copied())
                    .unwrap_or(1.0)
                    * factor as f64;
                cfg.penalty.levels = Some(vec![level]);
                cfg.penalty.max_exponent = None;
                level
            }
        };
        let summary = scenarios::run(&cfg, true)?;
        let value = headline(&summary).ok_or("scenario produced no headline value")?;
        let delta = prev.map(|p| (value - p).abs());
        if let Some(d) = delta {
            deltas.push(d);
        }
        prev = Some(value);
        rows.push(match axis {
            Axis::SpaceNodes => format!(
                "{},{},{},{}",
                cfg.space_nodes,
                cfg.steps,
                fmt(value),
                delta.map(fmt).unwrap_or_default()
            ),
            _ => format!(
                "{},{},{},{}",
                fmt(axis_value),
                cfg.paths,
                fmt(value),
                delta.map(fmt).unwrap_or_default()
            ),
        });
        if !quiet {
            println!("converge {}={}: value={}", axis.label(), axis_value, fmt(value));
        }
    }

    let header = match axis {
        Axis::SpaceNodes => "nx,N,u00,delta_vs_previous",
        Axis::Steps => "N,M,value,delta_vs_previous",
        Axis::Paths => "M_axis,M,value,delta_vs_previous",
        Axis::Penalty => "penalty,M,value,delta_vs_previous",
    };
    let out = Path::new(&out_base);
    let csv = write_csv(out, "convergence.csv", header, rows)?;

    let mut summary = Summary::new(
        &format!("converge-{}", axis.label()),
        base.seed,
        &["grid_refinement_self_consistency"],
    );
    summary.record("deltas", deltas.clone());
    summary.artifacts.push(csv.display().to_string());
    // Deltas at or below the rounding floor count as converged.
    let first = deltas.first().copied().unwrap_or(0.0);
    let last = deltas.last().copied().unwrap_or(0.0);
    summary.check(Check::le("refinement_nonincreasing", last, first.max(1e-9)));
    summary.write(out)?;
    Ok(summary)
}
