//! Dialogue corpus format, validation, span derivation and statistics.

mod generator;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{CharSpan, Source};
use crate::tracker::{DialogueState, SlotValue};

pub use generator::{generate_synthetic, GeneratorError, GeneratorProfile, SlotSpec, SyntheticSplits};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("corpus I/O: {0}")]
    Io(String),
    #[error("corpus parse error: {0}")]
    Parse(String),
    #[error("duplicate slot {0} in schema")]
    DuplicateSlot(String),
    #[error("dialogue {dialogue} turn {turn}: unknown slot {slot}")]
    UnknownSlot { dialogue: String, turn: usize, slot: String },
    #[error("dialogue {dialogue} turn {turn} slot {slot}: {msg}")]
    BadLabel {
        dialogue: String,
        turn: usize,
        slot: String,
        msg: String,
    },
    #[error("dialogue {dialogue} turn {turn} slot {slot}: offsets select {found:?}, label value is {expected:?}")]
    OffsetMismatch {
        dialogue: String,
        turn: usize,
        slot: String,
        expected: String,
        found: String,
    },
    #[error("dialogue {dialogue} turn {turn}: stored state {stored} differs from folded labels {folded}")]
    InconsistentState {
        dialogue: String,
        turn: usize,
        stored: String,
        folded: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub slots: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    None,
    DontCare,
    Value,
}

/// What one turn says about one slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Label {
    #[serde(rename = "type")]
    pub kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_end: Option<usize>,
}

impl Label {
    pub fn none() -> Self {
        Self {
            kind: LabelKind::None,
            value: None,
            source: None,
            char_start: None,
            char_end: None,
        }
    }

    pub fn dontcare() -> Self {
        Self {
            kind: LabelKind::DontCare,
            ..Self::none()
        }
    }

    /// A value label without offsets.
    pub fn value(value: impl Into<String>) -> Self {
        Self {
            kind: LabelKind::Value,
            value: Some(value.into()),
            ..Self::none()
        }
    }

    pub fn value_at(value: impl Into<String>, span: CharSpan) -> Self {
        Self {
            kind: LabelKind::Value,
            value: Some(value.into()),
            source: Some(span.source),
            char_start: Some(span.start),
            char_end: Some(span.end),
        }
    }

    /// Explicit character span, when all three offset fields are present.
    pub fn char_span(&self) -> Option<CharSpan> {
        Some(CharSpan {
            source: self.source?,
            start: self.char_start?,
            end: self.char_end?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub labels: BTreeMap<String, Label>,
    /// Gold accumulated state after this turn.
    #[serde(default)]
    pub state: DialogueState,
}

impl Turn {
    pub fn utterance(&self, source: Source) -> &str {
        match source {
            Source::System => &self.system,
            Source::User => &self.user,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn turn_pairs(&self) -> Vec<(&str, &str)> {
        self.turns.iter().map(|t| (t.system.as_str(), t.user.as_str())).collect()
    }

    pub fn gold_states(&self) -> Vec<DialogueState> {
        self.turns.iter().map(|t| t.state.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub schema: Schema,
    pub dialogues: Vec<Dialogue>,
}

/// Applies one turn's labels to `prev`.
pub fn fold_labels(prev: &DialogueState, labels: &BTreeMap<String, Label>) -> DialogueState {
    let mut next = prev.clone();
    for (slot, label) in labels {
        match (label.kind, &label.value) {
            (LabelKind::Value, Some(v)) => next.set(slot.clone(), SlotValue::from(v.as_str())),
            (LabelKind::DontCare, _) => next.set(slot.clone(), SlotValue::DontCare),
            _ => {}
        }
    }
    next
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Case-insensitive, word-bounded occurrences of `value` in `text`, as
/// `[start, end)` character offsets.
fn occurrences(text: &[char], value: &[char]) -> Vec<(usize, usize)> {
    if value.is_empty() || value.len() > text.len() {
        return Vec::new();
    }
    let fold = crate::tokenizer::fold_case;
    (0..=text.len() - value.len())
        .filter(|&s| {
            let e = s + value.len();
            text[s..e].iter().zip(value).all(|(a, b)| fold(*a) == fold(*b))
                && (s == 0 || !(is_word_char(text[s - 1]) && is_word_char(value[0])))
                && (e == text.len() || !(is_word_char(text[e]) && is_word_char(value[value.len() - 1])))
        })
        .map(|s| (s, s + value.len()))
        .collect()
}

/// Last occurrence of `value` in context order (system, then user).
pub fn derive_char_span(system: &str, user: &str, value: &str) -> Option<CharSpan> {
    let value: Vec<char> = value.chars().collect();
    [(Source::User, user), (Source::System, system)]
        .into_iter()
        .find_map(|(source, text)| {
            let text: Vec<char> = text.chars().collect();
            occurrences(&text, &value)
                .last()
                .map(|&(start, end)| CharSpan { source, start, end })
        })
}

fn slice_chars(text: &str, start: usize, end: usize) -> Option<String> {
    if start > end {
        return None;
    }
    let chars: Vec<char> = text.chars().collect();
    chars.get(start..end).map(|c| c.iter().collect())
}

fn state_json(s: &DialogueState) -> String {
    serde_json::to_string(s).expect("states serialize")
}

impl Corpus {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let corpus: Corpus = serde_json::from_str(text).map_err(|e| CorpusError::Parse(e.to_string()))?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    /// Checks schema, labels, offsets and gold states. Value labels whose
    /// span cannot be found in the turn produce a warning, not an error.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for s in &self.schema.slots {
            if !seen.insert(s.as_str()) {
                return Err(CorpusError::DuplicateSlot(s.clone()));
            }
        }
        for d in &self.dialogues {
            let mut state = DialogueState::new();
            for (ti, turn) in d.turns.iter().enumerate() {
                let unknown = |slot: &str| CorpusError::UnknownSlot {
                    dialogue: d.id.clone(),
                    turn: ti,
                    slot: slot.to_string(),
                };
                for (slot, label) in &turn.labels {
                    if !seen.contains(slot.as_str()) {
                        return Err(unknown(slot));
                    }
                    self.validate_label(&d.id, ti, slot, label, turn)?;
                }
                if let Some((slot, _)) = turn.state.iter().find(|(s, _)| !seen.contains(s)) {
                    return Err(unknown(slot));
                }
                state = fold_labels(&state, &turn.labels);
                if state != turn.state {
                    return Err(CorpusError::InconsistentState {
                        dialogue: d.id.clone(),
                        turn: ti,
                        stored: state_json(&turn.state),
                        folded: state_json(&state),
                    });
                }
            }
        }
        Ok(())
    }

    fn validate_label(&self, dialogue: &str, turn_index: usize, slot: &str, label: &Label, turn: &Turn) -> Result<(), CorpusError> {
        let bad = |msg: &str| CorpusError::BadLabel {
            dialogue: dialogue.to_string(),
            turn: turn_index,
            slot: slot.to_string(),
            msg: msg.to_string(),
        };
        let has_offsets = label.source.is_some() || label.char_start.is_some() || label.char_end.is_some();
        match label.kind {
            LabelKind::None | LabelKind::DontCare => {
                if label.value.is_some() || has_offsets {
                    return Err(bad("only value labels carry a value or offsets"));
                }
            }
            LabelKind::Value => {
                let value = label.value.as_deref().ok_or_else(|| bad("value label without value"))?;
                if value.is_empty() {
                    return Err(bad("empty value"));
                }
                match label.char_span() {
                    Some(span) => {
                        let found = slice_chars(turn.utterance(span.source), span.start, span.end)
                            .ok_or_else(|| bad("offsets out of range"))?;
                        if found != value {
                            return Err(CorpusError::OffsetMismatch {
                                dialogue: dialogue.to_string(),
                                turn: turn_index,
                                slot: slot.to_string(),
                                expected: value.to_string(),
                                found,
                            });
                        }
                    }
                    None if has_offsets => return Err(bad("source, char_start and char_end must appear together")),
                    None => {
                        if derive_char_span(&turn.system, &turn.user, value).is_none() {
                            log::warn!("dialogue {dialogue} turn {turn_index} slot {slot}: value {value:?} not found in turn");
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub none: usize,
    pub dontcare: usize,
    pub value: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotStats {
    /// Distinct value labels, compared case-insensitively.
    pub unique_values: usize,
    /// Distinct values absent from the reference corpus, if one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oov_values: Option<usize>,
    pub labels: LabelCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub turns: usize,
    pub slots: BTreeMap<String, SlotStats>,
}

/// Lowercased value-label strings per slot.
pub fn slot_values(corpus: &Corpus) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> =
        corpus.schema.slots.iter().map(|s| (s.clone(), BTreeSet::new())).collect();
    for turn in corpus.dialogues.iter().flat_map(|d| &d.turns) {
        for (slot, label) in &turn.labels {
            if let (LabelKind::Value, Some(v)) = (label.kind, &label.value) {
                out.entry(slot.clone()).or_default().insert(v.to_lowercase());
            }
        }
    }
    out
}

/// Counts per slot; turns without a label for a slot count as `none`.
pub fn corpus_stats(corpus: &Corpus, reference: Option<&Corpus>) -> CorpusStats {
    let values = slot_values(corpus);
    let reference = reference.map(slot_values);
    let mut slots = BTreeMap::new();
    for slot in &corpus.schema.slots {
        let mut labels = LabelCounts::default();
        for turn in corpus.dialogues.iter().flat_map(|d| &d.turns) {
            match turn.labels.get(slot).map(|l| l.kind) {
                None | Some(LabelKind::None) => labels.none += 1,
                Some(LabelKind::DontCare) => labels.dontcare += 1,
                Some(LabelKind::Value) => labels.value += 1,
            }
        }
        let vals = &values[slot];
        let oov_values = reference.as_ref().map(|r| {
            let known = r.get(slot);
            vals.iter().filter(|v| !known.is_some_and(|k| k.contains(*v))).count()
        });
        slots.insert(
            slot.clone(),
            SlotStats {
                unique_values: vals.len(),
                oov_values,
                labels,
            },
        );
    }
    CorpusStats {
        dialogues: corpus.dialogues.len(),
        turns: corpus.num_turns(),
        slots,
    }
}
