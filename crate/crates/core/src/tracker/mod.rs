//! Turn predictions, the rule-based state update, and the model bundle.

mod format;
mod model;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::encoder::ConfigError;
use crate::heads::SlotClass;
use crate::numeric::NumericError;

pub use format::{FORMAT_VERSION, MAGIC};
pub use model::{ModelBundle, OutputDropout, SlotOutputs, TrackerOptions, TurnOutputs};

pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model bundle: {0}")]
    Invalid(String),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// Value of one tracked slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    DontCare,
    Value(String),
}

impl SlotValue {
    pub fn as_str(&self) -> &str {
        match self {
            SlotValue::DontCare => DONTCARE,
            SlotValue::Value(v) => v,
        }
    }

    /// Case-insensitive comparison used by evaluation.
    pub fn matches(&self, other: &SlotValue) -> bool {
        match (self, other) {
            (SlotValue::DontCare, SlotValue::DontCare) => true,
            (SlotValue::Value(a), SlotValue::Value(b)) => a.to_lowercase() == b.to_lowercase(),
            _ => false,
        }
    }
}

impl From<&str> for SlotValue {
    fn from(s: &str) -> Self {
        if s == DONTCARE {
            SlotValue::DontCare
        } else {
            SlotValue::Value(s.to_string())
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SlotValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("slot values must be non-empty"));
        }
        Ok(SlotValue::from(s.as_str()))
    }
}

/// Accumulated slot values; absent slots are untracked.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState(pub BTreeMap<String, SlotValue>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &str) -> Option<&SlotValue> {
        self.0.get(slot)
    }

    pub fn set(&mut self, slot: impl Into<String>, value: SlotValue) {
        self.0.insert(slot.into(), value);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SlotValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<K: Into<String>, V: Into<SlotValue>> FromIterator<(K, V)> for DialogueState {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// One slot's turn-level output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub class: SlotClass,
    /// Inclusive context token positions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub span: Option<(usize, usize)>,
    /// Original-casing text covered by `span`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<String>,
}

impl SlotPrediction {
    pub fn none() -> Self {
        Self {
            class: SlotClass::None,
            span: None,
            value: None,
        }
    }

    pub fn dontcare() -> Self {
        Self {
            class: SlotClass::DontCare,
            span: None,
            value: None,
        }
    }

    pub fn span(start: usize, end: usize, value: impl Into<String>) -> Self {
        Self {
            class: SlotClass::Span,
            span: Some((start, end)),
            value: Some(value.into()),
        }
    }
}

/// Per-slot predictions for one turn, keyed by slot name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TurnPrediction(pub BTreeMap<String, SlotPrediction>);

impl TurnPrediction {
    pub fn get(&self, slot: &str) -> Option<&SlotPrediction> {
        self.0.get(slot)
    }
}

/// Applies one turn: span sets the value, dontcare sets dontcare, none keeps
/// whatever was tracked before.
pub fn update_state(prev: &DialogueState, turn: &TurnPrediction) -> DialogueState {
    let mut next = prev.clone();
    for (slot, pred) in &turn.0 {
        match (pred.class, &pred.value) {
            (SlotClass::Span, Some(v)) if !v.is_empty() => next.set(slot.clone(), SlotValue::Value(v.clone())),
            (SlotClass::DontCare, _) => next.set(slot.clone(), SlotValue::DontCare),
            _ => {}
        }
    }
    next
}

/// States after every turn when folding `update_state` from the empty state.
pub fn fold_states<'a>(turns: impl IntoIterator<Item = &'a TurnPrediction>) -> Vec<DialogueState> {
    let mut state = DialogueState::new();
    turns
        .into_iter()
        .map(|t| {
            state = update_state(&state, t);
            state.clone()
        })
        .collect()
}

/// Predicts and folds a whole dialogue of `(system, user)` turns.
pub fn track_dialogue<S: AsRef<str>>(model: &ModelBundle, turns: &[(S, S)]) -> Result<Vec<DialogueState>, ModelError> {
    let preds = turns
        .iter()
        .map(|(s, u)| model.predict_turn(s.as_ref(), u.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fold_states(&preds))
}
