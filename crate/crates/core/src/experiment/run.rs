use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MagnitudeTarget, Mode};
use super::metrics::{metrics_csv, MetricsRecord, METRICS_HEADER, METRICS_SCHEMA_VERSION};
use super::train::{train, TrainOutcome};
use super::{ExperimentError, Result};
use crate::data::{generate, save_tensors, write_manifest, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub magnitude: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: String,
    pub mode: Mode,
    pub task: TaskKind,
    pub seed: u64,
    pub final_test_accuracy: f64,
    pub final_val_accuracy: f64,
    /// Full trainings performed to produce this result.
    pub cost_multiplier: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub wall_time_ms: f64,
    pub selected_magnitude: Option<f64>,
    pub grid: Vec<GridResult>,
    pub config: ExperimentConfig,
}

/// Executes `cfg` in memory. For validated magnitude the returned outcome is
/// the selected grid point's.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<(RunSummary, TrainOutcome)> {
    cfg.validate()?;
    let (train_set, test_set) = generate(&cfg.task, cfg.seed)?;
    let mut summary = RunSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        name: cfg.name.clone(),
        mode: cfg.mode,
        task: cfg.task.task,
        seed: cfg.seed,
        final_test_accuracy: f64::NAN,
        final_val_accuracy: f64::NAN,
        cost_multiplier: 1,
        inner_steps: 0,
        outer_steps: 0,
        wall_time_ms: 0.0,
        selected_magnitude: None,
        grid: Vec::new(),
        config: cfg.clone(),
    };
    let outcome = if cfg.mode == Mode::ValidatedMagnitude {
        let mut best: Option<(usize, TrainOutcome)> = None;
        let mut wall = 0.0;
        for (i, &m) in cfg.magnitude_grid.iter().enumerate() {
            let mut sub = cfg.clone();
            sub.mode = Mode::Predefined;
            let mut ranges = cfg.predefined;
            match cfg.magnitude_target() {
                MagnitudeTarget::TranslatePx => ranges.translate_px = m,
                MagnitudeTarget::Hue => ranges.hue = m,
            }
            let out = train(&sub, ranges, &train_set, &test_set, &mut |_| {})?;
            wall += out.wall_time_ms;
            summary.grid.push(GridResult {
                magnitude: m,
                val_accuracy: out.final_val_accuracy,
                val_loss: out.final_val_loss,
                test_accuracy: out.final_test_accuracy,
            });
            // Highest validation accuracy; ties go to the lower validation loss,
            // then to the earlier grid entry.
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    out.final_val_accuracy > b.final_val_accuracy
                        || (out.final_val_accuracy == b.final_val_accuracy
                            && out.final_val_loss < b.final_val_loss)
                }
            };
            if better {
                best = Some((i, out));
            }
        }
        let (i, out) = best.expect("grid validated non-empty");
        for r in &out.records {
            sink(r);
        }
        summary.selected_magnitude = Some(cfg.magnitude_grid[i]);
        summary.cost_multiplier = cfg.magnitude_grid.len();
        summary.wall_time_ms = wall;
        out
    } else {
        let ranges = if cfg.mode == Mode::Predefined {
            cfg.predefined
        } else {
            Default::default()
        };
        let out = train(cfg, ranges, &train_set, &test_set, sink)?;
        summary.wall_time_ms = out.wall_time_ms;
        out
    };
    summary.final_test_accuracy = outcome.final_test_accuracy;
    summary.final_val_accuracy = outcome.final_val_accuracy;
    summary.inner_steps = outcome.inner_steps;
    summary.outer_steps = outcome.outer_steps;
    Ok((summary, outcome))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

/// Runs `cfg` and writes `metrics.csv`, `summary.json`, `weights.blvt` and
/// `data_manifest.json` into `out_dir`. Metrics rows are flushed as they are
/// produced.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let streaming = cfg.mode != Mode::ValidatedMagnitude;
    let (summary, outcome) = if streaming {
        let file =
            File::create(&metrics_path).map_err(|e| ExperimentError::io(&metrics_path, e))?;
        let mut w = BufWriter::new(file);
        let mut io_err: Option<std::io::Error> = None;
        writeln!(w, "{METRICS_HEADER}").map_err(|e| ExperimentError::io(&metrics_path, e))?;
        let res = run_experiment(cfg, &mut |r| {
            if io_err.is_none() {
                if let Err(e) = writeln!(w, "{}", r.csv_row()).and_then(|_| w.flush()) {
                    io_err = Some(e);
                }
            }
        })?;
        if let Some(e) = io_err {
            return Err(ExperimentError::io(&metrics_path, e));
        }
        w.flush()
            .map_err(|e| ExperimentError::io(&metrics_path, e))?;
        res
    } else {
        let mut rows = Vec::new();
        let res = run_experiment(cfg, &mut |r| rows.push(r.clone()))?;
        write_file(&metrics_path, metrics_csv(&rows).as_bytes())?;
        res
    };

    let mut tensors: Vec<_> = outcome
        .omega
        .named()
        .map(|(n, t)| (n.to_string(), t.value().clone()))
        .collect();
    tensors.extend(
        outcome
            .theta
            .named()
            .map(|(n, t)| (n.to_string(), t.value().clone())),
    );
    save_tensors(&out_dir.join("weights.blvt"), &tensors)?;
    write_manifest(&out_dir.join("data_manifest.json"), &cfg.task, cfg.seed)?;
    write_file(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
