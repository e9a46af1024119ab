use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::Corpus;
use crate::encoder::EncoderConfig;
use crate::heads::{DecodeMode, SharingMode};
use crate::tracker::{track_dialogue, DialogueState, ModelBundle};

/// Whether `slot` agrees between two states. Untracked matches untracked;
/// values compare case-insensitively with no other normalization.
pub fn slot_matches(pred: &DialogueState, gold: &DialogueState, slot: &str) -> bool {
    match (pred.get(slot), gold.get(slot)) {
        (None, None) => true,
        (Some(p), Some(g)) => p.matches(g),
        _ => false,
    }
}

fn check_shapes(pred: &[DialogueState], gold: &[DialogueState]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::ShapeMismatch {
            predicted: pred.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of turns whose predicted state matches gold on every schema slot.
/// Zero turns give 0.
pub fn joint_goal_accuracy(pred: &[DialogueState], gold: &[DialogueState], schema: &[String]) -> Result<f64, EvalError> {
    check_shapes(pred, gold)?;
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| schema.iter().all(|s| slot_matches(p, g, s)))
        .count();
    Ok(fraction(hits, pred.len()))
}

/// Per schema slot, the fraction of turns where that slot matches gold.
pub fn per_slot_accuracy(
    pred: &[DialogueState],
    gold: &[DialogueState],
    schema: &[String],
) -> Result<BTreeMap<String, f64>, EvalError> {
    check_shapes(pred, gold)?;
    Ok(schema
        .iter()
        .map(|s| {
            let hits = pred.iter().zip(gold).filter(|(p, g)| slot_matches(p, g, s)).count();
            (s.clone(), fraction(hits, pred.len()))
        })
        .collect())
}

/// Model settings echoed into a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub encoder: EncoderConfig,
    pub sharing: SharingMode,
    pub decode_mode: DecodeMode,
    pub slots: Vec<String>,
    pub parameter_count: usize,
}

impl ReportConfig {
    pub fn of(model: &ModelBundle) -> Self {
        Self {
            encoder: *model.config(),
            sharing: model.sharing(),
            decode_mode: model.options().decode_mode,
            slots: model.slots().to_vec(),
            parameter_count: model.parameter_count(),
        }
    }
}

/// Field order is the serialized key order; maps are sorted by slot name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub joint_goal_accuracy: f64,
    pub per_slot_accuracy: BTreeMap<String, f64>,
    pub turn_count: usize,
    pub dialogue_count: usize,
    pub config: ReportConfig,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Tracked states for every dialogue of `corpus`.
pub fn predict_corpus(model: &ModelBundle, corpus: &Corpus) -> Result<Vec<Vec<DialogueState>>, EvalError> {
    corpus
        .dialogues
        .iter()
        .map(|d| track_dialogue(model, &d.turn_pairs()).map_err(EvalError::from))
        .collect()
}

/// Scores already tracked states against a corpus' gold states.
pub fn score(predicted: &[Vec<DialogueState>], corpus: &Corpus) -> Result<(f64, BTreeMap<String, f64>), EvalError> {
    if predicted.len() != corpus.dialogues.len() {
        return Err(EvalError::ShapeMismatch {
            predicted: predicted.len(),
            gold: corpus.dialogues.len(),
        });
    }
    let pred: Vec<DialogueState> = predicted.iter().flatten().cloned().collect();
    let gold: Vec<DialogueState> = corpus.dialogues.iter().flat_map(|d| d.gold_states()).collect();
    let schema = &corpus.schema.slots;
    Ok((joint_goal_accuracy(&pred, &gold, schema)?, per_slot_accuracy(&pred, &gold, schema)?))
}

/// Tracks every dialogue and scores it against gold.
pub fn evaluate(model: &ModelBundle, corpus: &Corpus) -> Result<EvalReport, EvalError> {
    if model.slots() != corpus.schema.slots.as_slice() {
        return Err(EvalError::SchemaMismatch {
            model: model.slots().to_vec(),
            corpus: corpus.schema.slots.clone(),
        });
    }
    let predicted = predict_corpus(model, corpus)?;
    let (joint, per_slot) = score(&predicted, corpus)?;
    Ok(EvalReport {
        joint_goal_accuracy: joint,
        per_slot_accuracy: per_slot,
        turn_count: corpus.num_turns(),
        dialogue_count: corpus.dialogues.len(),
        config: ReportConfig::of(model),
        seed: model.seed(),
    })
}
