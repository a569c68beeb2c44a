use serde::{Deserialize, Serialize};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &str =
    "epoch,iteration,train_loss,val_loss,test_accuracy,mean_abs_affine_delta,mean_abs_color,wall_time_ms";

/// One row per outer iteration; `test_accuracy` is filled on the last
/// iteration of each epoch only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_accuracy: Option<f64>,
    pub mean_abs_affine_delta: f64,
    pub mean_abs_color: f64,
    pub wall_time_ms: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let acc = self
            .test_accuracy
            .map(|a| a.to_string())
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.iteration,
            self.train_loss,
            self.val_loss,
            acc,
            self.mean_abs_affine_delta,
            self.mean_abs_color,
            self.wall_time_ms
        )
    }
}

/// Header plus one line per record, newline-terminated.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format() {
        let r = MetricsRecord {
            epoch: 1,
            iteration: 7,
            train_loss: 0.5,
            val_loss: 0.25,
            test_accuracy: None,
            mean_abs_affine_delta: 0.0,
            mean_abs_color: 0.0,
            wall_time_ms: 1.23456,
        };
        assert_eq!(r.csv_row(), "1,7,0.5,0.25,,0,0,1.235");
        let csv = metrics_csv(&[r]);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 8);
    }
}
