//! Per-slot classification and span heads.
//!
//! Each slot owns a 3-way classifier over `{none, dontcare, span}` applied to
//! the `[CLS]` row and a 2-column span projection whose columns give start and
//! end logits for every token row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{init_tensor, EncoderConfig, Init};
use crate::numeric::rng::DetRng;
use crate::numeric::{BoundParams, NumericError, ParamId, ParamStore, Scalar, Tape, Var};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotClass {
    None = 0,
    DontCare = 1,
    Span = 2,
}

impl SlotClass {
    pub const ALL: [SlotClass; NUM_CLASSES] = [SlotClass::None, SlotClass::DontCare, SlotClass::Span];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Whether every slot shares one encoder or owns its own copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SharingMode {
    #[serde(rename = "ps")]
    Shared,
    #[serde(rename = "ss")]
    SlotSpecific,
}

impl std::str::FromStr for SharingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ps" | "shared" => Ok(Self::Shared),
            "ss" | "slot-specific" => Ok(Self::SlotSpecific),
            other => Err(format!("unknown sharing mode `{other}` (expected ps or ss)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Start and end chosen by separate argmax; end clamped to start.
    #[default]
    Independent,
    /// Best `(start, end)` pair with `start <= end`.
    Joint,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(Self::Independent),
            "joint" => Ok(Self::Joint),
            other => Err(format!("unknown decode mode `{other}` (expected independent or joint)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotHeadWeights {
    pub class_weight: ParamId,
    pub class_bias: ParamId,
    pub span_weight: ParamId,
    pub span_bias: ParamId,
}

fn layout(prefix: &str, d: usize) -> [(String, Vec<usize>, Init); 4] {
    [
        (format!("{prefix}.class.weight"), vec![NUM_CLASSES, d], Init::Normal),
        (format!("{prefix}.class.bias"), vec![NUM_CLASSES], Init::Zeros),
        (format!("{prefix}.span.weight"), vec![2, d], Init::Normal),
        (format!("{prefix}.span.bias"), vec![2], Init::Zeros),
    ]
}

impl SlotHeadWeights {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, hidden_size: usize, rng: &mut DetRng) -> Self {
        for (name, shape, init) in layout(prefix, hidden_size) {
            store.add(name, init_tensor(shape, init, rng));
        }
        Self::from_store(store, prefix, hidden_size).expect("freshly added tensors are present")
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str, hidden_size: usize) -> Result<Self, String> {
        let mut ids = Vec::with_capacity(4);
        for (name, shape, _) in layout(prefix, hidden_size) {
            let id = store.find(&name).ok_or_else(|| format!("missing tensor {name}"))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                ));
            }
            ids.push(id);
        }
        Ok(Self {
            class_weight: ids[0],
            class_bias: ids[1],
            span_weight: ids[2],
            span_bias: ids[3],
        })
    }
}

/// Scalars in one slot's heads: `(3d + 3) + (2d + 2)`.
pub fn slot_head_parameter_count(hidden_size: usize) -> usize {
    5 * hidden_size + 5
}

/// Exact scalar count of a full model with `num_slots` slots.
pub fn model_parameter_count(cfg: &EncoderConfig, num_slots: usize, sharing: SharingMode) -> usize {
    let heads = num_slots * slot_head_parameter_count(cfg.hidden_size);
    match sharing {
        SharingMode::Shared => cfg.parameter_count() + heads,
        SharingMode::SlotSpecific => num_slots * cfg.parameter_count() + heads,
    }
}

/// Class logits `[1 x 3]` from the `[CLS]` row `t0` of shape `[1 x d]`.
pub fn class_logits<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bound: &BoundParams,
    head: &SlotHeadWeights,
    t0: Var,
) -> Result<Var, NumericError> {
    tape.linear(t0, bound.get(head.class_weight), Some(bound.get(head.class_bias)))
}

/// Start and end logits, each `[n x 1]`, from token rows `[n x d]`.
pub fn span_logits<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bound: &BoundParams,
    head: &SlotHeadWeights,
    tokens: Var,
) -> Result<(Var, Var), NumericError> {
    let both = tape.linear(tokens, bound.get(head.span_weight), Some(bound.get(head.span_bias)))?;
    Ok((tape.cols(both, 0, 1)?, tape.cols(both, 1, 1)?))
}

/// Softmax over the three class logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub none: f64,
    pub dontcare: f64,
    pub span: f64,
}

impl ClassDistribution {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let p = softmax(&logits.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        Self {
            none: p[0],
            dontcare: p[1],
            span: p[2],
        }
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        [self.none, self.dontcare, self.span]
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> SlotClass {
        let p = self.as_array();
        let best = (1..NUM_CLASSES).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        SlotClass::ALL[best]
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no valid span positions")]
    NoValidPositions,
    #[error("logit lengths differ: start {start}, end {end}, mask {mask}")]
    LengthMismatch { start: usize, end: usize, mask: usize },
}

/// Picks a span `(start, end)` over positions where `valid` is true.
///
/// Indices are into the given slices. Softmax is monotone, so both modes work
/// directly on logits: independent mode takes the two argmaxes and clamps
/// `end` up to `start`; joint mode maximizes `start_logit[i] + end_logit[j]`
/// over `i <= j`. Ties resolve to the earliest index.
pub fn decode_span(start: &[f64], end: &[f64], valid: &[bool], mode: DecodeMode) -> Result<(usize, usize), DecodeError> {
    if start.len() != end.len() || start.len() != valid.len() {
        return Err(DecodeError::LengthMismatch {
            start: start.len(),
            end: end.len(),
            mask: valid.len(),
        });
    }
    let argmax = |x: &[f64]| {
        (0..x.len())
            .filter(|&i| valid[i])
            .fold(None, |b: Option<usize>, i| match b {
                Some(j) if x[j] >= x[i] => Some(j),
                _ => Some(i),
            })
    };
    match mode {
        DecodeMode::Independent => {
            let s = argmax(start).ok_or(DecodeError::NoValidPositions)?;
            let e = argmax(end).ok_or(DecodeError::NoValidPositions)?;
            Ok((s, e.max(s)))
        }
        DecodeMode::Joint => {
            let mut best_start: Option<usize> = None;
            let mut best: Option<(usize, usize, f64)> = None;
            for j in 0..start.len() {
                if !valid[j] {
                    continue;
                }
                if best_start.is_none_or(|b| start[j] > start[b]) {
                    best_start = Some(j);
                }
                let i = best_start.expect("set above");
                let score = start[i] + end[j];
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((i, j, score));
                }
            }
            best.map(|(i, j, _)| (i, j)).ok_or(DecodeError::NoValidPositions)
        }
    }
}
