use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, EvalReport};
use crate::data::{slot_values, Corpus};
use crate::heads::SharingMode;
use crate::training::{train, TrainConfig};

/// Slots where at least half of the unique `test` values never occur in `train`.
pub fn detect_oov_slots(train: &Corpus, test: &Corpus) -> Vec<String> {
    let seen = slot_values(train);
    slot_values(test)
        .into_iter()
        .filter(|(slot, values)| {
            let unseen = values.iter().filter(|v| !seen.get(slot).is_some_and(|s| s.contains(*v))).count();
            !values.is_empty() && 2 * unseen >= values.len()
        })
        .map(|(slot, _)| slot)
        .collect()
}

fn mean_over(per_slot: &BTreeMap<String, f64>, slots: &[String]) -> Option<f64> {
    let vals: Vec<f64> = slots.iter().filter_map(|s| per_slot.get(s).copied()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub slot_value_dropout: f64,
    pub seed: u64,
    pub test_joint_acc: f64,
    /// Mean per-slot accuracy over the OOV slots; absent when there are none.
    pub oov_slot_acc: Option<f64>,
    pub per_slot_accuracy: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub oov_slots: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Median OOV-slot accuracy across seeds for one grid point.
    pub fn median_oov_acc(&self, p: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.slot_value_dropout == p)
            .filter_map(|r| r.oov_slot_acc)
            .collect();
        median(&v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables serialize")
    }

    /// One row per run: `p,seed,test_joint_acc,oov_slot_acc,best_epoch,epochs_run,train_seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,seed,test_joint_acc,oov_slot_acc,best_epoch,epochs_run,train_seconds\n");
        for r in &self.rows {
            let oov = r.oov_slot_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{:.3}",
                r.slot_value_dropout, r.seed, r.test_joint_acc, oov, r.best_epoch, r.epochs_run, r.train_seconds
            );
        }
        out
    }
}

/// Trains one model per (grid point, seed) and scores it on `test`.
/// `oov_slots` defaults to [`detect_oov_slots`] on train and test.
pub fn run_svd_ablation(
    train_corpus: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    base: &TrainConfig,
    grid: &[f64],
    seeds: &[u64],
    oov_slots: Option<Vec<String>>,
) -> Result<AblationTable, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::Grid("grid is empty".into()));
    }
    if let Some(p) = grid.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(EvalError::Grid(format!("{p} outside [0, 1)")));
    }
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let oov_slots = oov_slots.unwrap_or_else(|| detect_oov_slots(train_corpus, test));
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    for &p in grid {
        for &seed in &seeds {
            let cfg = TrainConfig {
                slot_value_dropout: p,
                seed,
                ..base.clone()
            };
            let started = Instant::now();
            let outcome = train(train_corpus, dev, &cfg)?;
            let train_seconds = started.elapsed().as_secs_f64();
            let report = evaluate(&outcome.model, test)?;
            log::info!("svd p={p} seed={seed}: test joint {:.4}", report.joint_goal_accuracy);
            rows.push(AblationRow {
                slot_value_dropout: p,
                seed,
                test_joint_acc: report.joint_goal_accuracy,
                oov_slot_acc: mean_over(&report.per_slot_accuracy, &oov_slots),
                per_slot_accuracy: report.per_slot_accuracy,
                best_epoch: outcome.history.best_epoch().unwrap_or(0),
                epochs_run: outcome.history.epochs.len(),
                train_seconds,
            });
        }
    }
    Ok(AblationTable { oov_slots, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingRow {
    pub sharing: SharingMode,
    pub seed: u64,
    pub parameter_count: usize,
    pub train_seconds: f64,
    pub epochs_run: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingTable {
    pub rows: Vec<SharingRow>,
}

impl SharingTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables serialize")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sharing,seed,parameter_count,test_joint_acc,train_seconds,epochs_run\n");
        for r in &self.rows {
            let mode = match r.sharing {
                SharingMode::Shared => "ps",
                SharingMode::SlotSpecific => "ss",
            };
            let _ = writeln!(
                out,
                "{mode},{},{},{:.6},{:.3},{}",
                r.seed, r.parameter_count, r.report.joint_goal_accuracy, r.train_seconds, r.epochs_run
            );
        }
        out
    }
}

/// Trains PS and SS models with the same config and seeds, scoring both on `test`.
pub fn run_sharing_comparison(
    train_corpus: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<SharingTable, EvalError> {
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    let mut rows = Vec::new();
    for &seed in &seeds {
        for sharing in [SharingMode::Shared, SharingMode::SlotSpecific] {
            let cfg = TrainConfig {
                sharing,
                seed,
                ..base.clone()
            };
            let started = Instant::now();
            let outcome = train(train_corpus, dev, &cfg)?;
            let train_seconds = started.elapsed().as_secs_f64();
            rows.push(SharingRow {
                sharing,
                seed,
                parameter_count: outcome.model.parameter_count(),
                train_seconds,
                epochs_run: outcome.history.epochs.len(),
                report: evaluate(&outcome.model, test)?,
            });
        }
    }
    Ok(SharingTable { rows })
}
