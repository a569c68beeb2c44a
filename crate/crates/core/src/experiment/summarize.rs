use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::config::Mode;
use super::run::RunSummary;
use super::{ExperimentError, Result};
use crate::data::TaskKind;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub runs: usize,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
    /// Full trainings per result (search multiplier).
    pub cost_multiplier: f64,
    /// Mean wall time relative to the `none` rows, when present.
    pub relative_wall_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub task: TaskKind,
    pub rows: Vec<SummaryRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (zero for a single run).
fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

const MODE_ORDER: [Mode; 5] = [
    Mode::None,
    Mode::Predefined,
    Mode::TransformInvariant,
    Mode::ValidatedMagnitude,
    Mode::Learned,
];

/// Groups runs by mode. All runs must share one task.
pub fn summarize(runs: &[RunSummary]) -> Result<SummaryTable> {
    let first = runs
        .first()
        .ok_or_else(|| ExperimentError::Summary("no runs given".into()))?;
    if let Some(other) = runs.iter().find(|r| r.task != first.task) {
        return Err(ExperimentError::Summary(format!(
            "mixed tasks: {:?} and {:?}",
            first.task, other.task
        )));
    }
    let mut by_mode: BTreeMap<usize, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let key = MODE_ORDER
            .iter()
            .position(|m| *m == r.mode)
            .expect("all modes listed");
        by_mode.entry(key).or_default().push(r);
    }
    let wall = |rs: &[&RunSummary]| mean(&rs.iter().map(|r| r.wall_time_ms).collect::<Vec<_>>());
    let base_wall = by_mode.get(&0).map(|rs| wall(rs));
    let rows = by_mode
        .iter()
        .map(|(&k, rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.final_test_accuracy).collect();
            SummaryRow {
                mode: MODE_ORDER[k],
                runs: rs.len(),
                mean_test_accuracy: mean(&acc),
                std_test_accuracy: std(&acc),
                cost_multiplier: mean(
                    &rs.iter()
                        .map(|r| r.cost_multiplier as f64)
                        .collect::<Vec<_>>(),
                ),
                relative_wall_time: base_wall.filter(|b| *b > 0.0).map(|b| wall(rs) / b),
            }
        })
        .collect();
    Ok(SummaryTable {
        task: first.task,
        rows,
    })
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "mode,runs,mean_test_accuracy,std_test_accuracy,cost_multiplier,relative_wall_time\n",
        );
        for r in &self.rows {
            let rel = r
                .relative_wall_time
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.mode.as_str(),
                r.runs,
                r.mean_test_accuracy,
                r.std_test_accuracy,
                r.cost_multiplier,
                rel
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("task: {:?}\n", self.task);
        let _ = writeln!(
            s,
            "{:<20} {:>4} {:>16} {:>6} {:>9}",
            "mode", "runs", "test acc (%)", "cost", "wall x"
        );
        for r in &self.rows {
            let rel = r
                .relative_wall_time
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<20} {:>4} {:>8.2} ± {:<5.2} {:>6} {:>9}",
                r.mode.as_str(),
                r.runs,
                100.0 * r.mean_test_accuracy,
                100.0 * r.std_test_accuracy,
                r.cost_multiplier,
                rel
            );
        }
        s
    }
}
