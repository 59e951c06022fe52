use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-example means over the epoch's training batches.
    pub combined_loss: f64,
    pub class_loss: f64,
    pub pose_loss: Option<f64>,
    /// Percent.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Mean pose distance on the held-out split, radians.
    pub mean_pose_err_rad: Option<f64>,
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64 * 100.0
        }
    }

    /// Row-normalized percentages; empty truth rows stay all zero.
    pub fn percent(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 * 100.0 })
                    .collect()
            })
            .collect()
    }

    /// Percent matrix with class names as row and column headers.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("truth\\predicted");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(self.percent()) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub confusion: Option<ConfusionMatrix>,
}

pub const METRICS_HEADER: &str =
    "epoch,combined_loss,class_loss,pose_loss,train_acc,test_acc,mean_pose_err_rad";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    /// Header plus one row per epoch; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.combined_loss,
                r.class_loss,
                opt(r.pose_loss),
                r.train_acc,
                opt(r.test_acc),
                opt(r.mean_pose_err_rad)
            )
            .unwrap();
        }
        out
    }
}
