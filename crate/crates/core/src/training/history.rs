use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryMeta {
    pub config: TrainConfig,
    pub reference_learning_rate: f64,
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub train_examples: usize,
    pub dropped_examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_joint_acc: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_epoch: usize,
    pub best_val_joint_acc: f64,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub meta: HistoryMeta,
    pub epochs: Vec<EpochRecord>,
    pub summary: Option<Summary>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl History {
    pub fn new(meta: HistoryMeta) -> Self {
        Self {
            meta,
            epochs: Vec::new(),
            summary: None,
        }
    }

    pub fn push(&mut self, epoch: usize, train_loss: f64, val_joint_acc: f64) {
        self.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_joint_acc,
            timestamp: now(),
        });
    }

    pub fn finish(&mut self, best_epoch: usize, best_val_joint_acc: f64, stop_reason: StopReason) {
        self.summary = Some(Summary {
            best_epoch,
            best_val_joint_acc,
            stop_reason,
        });
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.summary.as_ref().map(|s| s.best_epoch)
    }

    /// A `{"meta": ..}` line, one line per epoch, then `{"summary": ..}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "meta": self.meta }).to_string();
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("records serialize"));
            out.push('\n');
        }
        if let Some(s) = &self.summary {
            out.push_str(&serde_json::json!({ "summary": s }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}
