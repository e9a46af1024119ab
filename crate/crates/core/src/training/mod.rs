//! Turn loss, slot value dropout, example construction and the training loop.

mod history;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_char_span, Corpus, LabelKind};
use crate::encoder::EncoderConfig;
use crate::eval::{predict_corpus, score};
use crate::heads::{DecodeMode, SharingMode, SlotClass};
use crate::numeric::rng::stream;
use crate::numeric::{Adam, AdamConfig, NumericError, Scalar, Tape, Var};
use crate::tokenizer::{align_span, build_context, ContextOptions, EncodedContext, Vocab};
use crate::tracker::{ModelBundle, ModelError, OutputDropout, TrackerOptions, TurnOutputs};

pub use history::{EpochRecord, History, HistoryMeta, StopReason};

/// Learning rate used with a pre-trained encoder; recorded for reference.
pub const REFERENCE_LEARNING_RATE: f64 = 2e-5;

const SHUFFLE_STREAM: u64 = 10;
const EXAMPLE_STREAM_BASE: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("{which} corpus schema {found:?} differs from {expected:?}")]
    SchemaMismatch {
        which: &'static str,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no usable training examples ({0} dropped)")]
    NoExamples(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("validation failed: {0}")]
    Validation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub class: f64,
    pub start: f64,
    pub end: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 0.8,
            start: 0.1,
            end: 0.1,
        }
    }
}

/// Encoder hyperparameters; the vocabulary size comes from the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderShape {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub feed_forward_size: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let d = EncoderConfig::desk(1);
        Self {
            num_layers: d.num_layers,
            hidden_size: d.hidden_size,
            num_heads: d.num_heads,
            feed_forward_size: d.feed_forward_size,
            max_positions: d.max_positions,
            dropout_rate: d.dropout_rate,
        }
    }
}

impl EncoderShape {
    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            hidden_size: self.hidden_size,
            num_heads: self.num_heads,
            feed_forward_size: self.feed_forward_size,
            max_positions: self.max_positions,
            vocab_size,
            dropout_rate: self.dropout_rate,
        }
    }
}

/// Every key is optional in the config file; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Dropout on every encoder output row before the heads.
    pub encoder_output_dropout: f64,
    /// Probability of replacing each target value token with `[UNK]`.
    pub slot_value_dropout: f64,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Stop as soon as validation joint goal accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
    pub sharing: SharingMode,
    pub decode_mode: DecodeMode,
    pub encoder: EncoderShape,
    pub max_vocab_size: usize,
    pub context: ContextOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            encoder_output_dropout: 0.3,
            slot_value_dropout: 0.0,
            loss_weights: LossWeights::default(),
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            target_accuracy: None,
            seed: 0,
            sharing: SharingMode::Shared,
            decode_mode: DecodeMode::Independent,
            encoder: EncoderShape::default(),
            max_vocab_size: 1000,
            context: ContextOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, p) in [
            ("encoder_output_dropout", self.encoder_output_dropout),
            ("slot_value_dropout", self.slot_value_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        let w = self.loss_weights;
        if [w.class, w.start, w.end].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be at least 1".into());
        }
        if self.max_vocab_size < 5 {
            return bad("max_vocab_size must leave room for words".into());
        }
        if self.context.max_len > self.encoder.max_positions || self.context.max_len < 4 {
            return bad(format!(
                "context max_len {} must be in [4, {}]",
                self.context.max_len, self.encoder.max_positions
            ));
        }
        self.encoder
            .with_vocab(self.max_vocab_size)
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// One slot's training target. `span` holds inclusive context positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotTarget {
    pub class: SlotClass,
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnExample {
    pub context: EncodedContext,
    /// One target per schema slot, in schema order.
    pub targets: Vec<SlotTarget>,
}

impl TurnExample {
    pub fn target_spans(&self) -> Vec<(usize, usize)> {
        self.targets.iter().filter_map(|t| t.span).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExampleSet {
    pub examples: Vec<TurnExample>,
    pub dropped: usize,
}

/// Builds one example per turn. Value labels use their offsets when given,
/// else the last occurrence of the value in the turn; turns with a value that
/// cannot be aligned to tokens are dropped and counted.
pub fn build_examples(corpus: &Corpus, vocab: &Vocab, options: ContextOptions) -> ExampleSet {
    let mut set = ExampleSet::default();
    for d in &corpus.dialogues {
        'turns: for (ti, turn) in d.turns.iter().enumerate() {
            let context = build_context(&turn.system, &turn.user, vocab, options);
            let mut targets = Vec::with_capacity(corpus.schema.slots.len());
            for slot in &corpus.schema.slots {
                let target = match turn.labels.get(slot) {
                    None => SlotTarget {
                        class: SlotClass::None,
                        span: None,
                    },
                    Some(l) => match l.kind {
                        LabelKind::None => SlotTarget {
                            class: SlotClass::None,
                            span: None,
                        },
                        LabelKind::DontCare => SlotTarget {
                            class: SlotClass::DontCare,
                            span: None,
                        },
                        LabelKind::Value => {
                            let value = l.value.as_deref().unwrap_or_default();
                            let chars = l
                                .char_span()
                                .or_else(|| derive_char_span(&turn.system, &turn.user, value));
                            let aligned = chars.ok_or_else(|| "value not found".to_string()).and_then(|c| {
                                align_span(c, &context).map_err(|e| e.to_string())
                            });
                            match aligned {
                                Ok(span) => SlotTarget {
                                    class: SlotClass::Span,
                                    span: Some(span),
                                },
                                Err(reason) => {
                                    log::warn!(
                                        "dialogue {} turn {ti} slot {slot}: dropping example ({reason})",
                                        d.id
                                    );
                                    set.dropped += 1;
                                    continue 'turns;
                                }
                            }
                        }
                    },
                };
                targets.push(target);
            }
            set.examples.push(TurnExample { context, targets });
        }
    }
    set
}

/// Replaces tokens inside `spans` with `unk` wherever `replace(position)`
/// says so. Each position is offered once, in ascending order.
pub fn replace_span_tokens(
    ctx: &EncodedContext,
    spans: &[(usize, usize)],
    unk: u32,
    mut replace: impl FnMut(usize) -> bool,
) -> EncodedContext {
    let positions: BTreeSet<usize> = spans.iter().flat_map(|&(s, e)| s..=e).collect();
    let mut out = ctx.clone();
    for p in positions {
        if p < out.token_ids.len() && replace(p) {
            out.token_ids[p] = unk;
        }
    }
    out
}

/// Independently replaces each target-span token with `[UNK]` with
/// probability `p`. Character alignment is left untouched.
pub fn apply_slot_value_dropout<R: Rng + ?Sized>(
    ctx: &EncodedContext,
    spans: &[(usize, usize)],
    p: f64,
    unk: u32,
    rng: &mut R,
) -> EncodedContext {
    if p <= 0.0 {
        return ctx.clone();
    }
    replace_span_tokens(ctx, spans, unk, |_| rng.random_bool(p))
}

/// Weighted per-slot cross entropies, averaged over slots. Span terms are
/// omitted for slots whose target class is none or dontcare.
pub fn turn_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    outputs: &TurnOutputs,
    targets: &[SlotTarget],
    weights: LossWeights,
) -> Result<Var, NumericError> {
    if outputs.slots.len() != targets.len() || targets.is_empty() {
        return Err(NumericError::InvalidArgument {
            op: "turn_loss",
            msg: format!("{} slot outputs but {} targets", outputs.slots.len(), targets.len()),
        });
    }
    let mut total: Option<Var> = None;
    for (o, t) in outputs.slots.iter().zip(targets) {
        let ce = tape.cross_entropy(o.class_logits, t.class.index())?;
        let mut slot = tape.scale(ce, T::lit(weights.class));
        if t.class == SlotClass::Span {
            let (s, e) = t.span.ok_or_else(|| NumericError::InvalidArgument {
                op: "turn_loss",
                msg: "span target without positions".into(),
            })?;
            if s == 0 || s > e {
                return Err(NumericError::InvalidArgument {
                    op: "turn_loss",
                    msg: format!("span ({s}, {e}) must satisfy 1 <= start <= end"),
                });
            }
            let cs = tape.cross_entropy(o.start_logits, s - 1)?;
            let cs = tape.scale(cs, T::lit(weights.start));
            let ce = tape.cross_entropy(o.end_logits, e - 1)?;
            let ce = tape.scale(ce, T::lit(weights.end));
            slot = tape.add(slot, cs)?;
            slot = tape.add(slot, ce)?;
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, slot)?,
            None => slot,
        });
    }
    let total = total.expect("at least one slot");
    Ok(tape.scale(total, T::lit(1.0 / targets.len() as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the metric has failed to strictly improve for `patience`
/// consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if metric <= b => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: ModelBundle,
    pub history: History,
}

/// Texts the vocabulary is built from.
pub fn corpus_texts(corpus: &Corpus) -> impl Iterator<Item = &str> {
    corpus
        .dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .flat_map(|t| [t.system.as_str(), t.user.as_str()])
}

/// Fresh model whose vocabulary comes from the training corpus.
pub fn build_model(train: &Corpus, cfg: &TrainConfig) -> Result<ModelBundle, TrainError> {
    cfg.validate()?;
    let vocab = Vocab::build(corpus_texts(train), cfg.max_vocab_size);
    let options = TrackerOptions {
        context: cfg.context,
        decode_mode: cfg.decode_mode,
    };
    Ok(ModelBundle::new(
        cfg.encoder.with_vocab(vocab.len()),
        cfg.sharing,
        train.schema.slots.clone(),
        vocab,
        options,
        cfg.seed,
    )?)
}

pub fn train(train_corpus: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let model = build_model(train_corpus, cfg)?;
    fit(model, train_corpus, dev, cfg)
}

fn validation_accuracy(model: &ModelBundle, dev: &Corpus) -> Result<f64, TrainError> {
    let predicted = predict_corpus(model, dev).map_err(|e| TrainError::Validation(e.to_string()))?;
    let (joint, _) = score(&predicted, dev).map_err(|e| TrainError::Validation(e.to_string()))?;
    Ok(joint)
}

/// Mini-batch Adam on `model` with early stopping on dev joint goal accuracy.
pub fn fit(mut model: ModelBundle, train_corpus: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    for (which, c) in [("train", train_corpus), ("dev", dev)] {
        if c.dialogues.is_empty() {
            return Err(TrainError::EmptyCorpus(which));
        }
        if c.schema.slots != model.slots() {
            return Err(TrainError::SchemaMismatch {
                which,
                expected: model.slots().to_vec(),
                found: c.schema.slots.clone(),
            });
        }
    }
    let set = build_examples(train_corpus, model.vocab(), model.options().context);
    if set.examples.is_empty() {
        return Err(TrainError::NoExamples(set.dropped));
    }
    if set.dropped > 0 {
        log::warn!("{} training turns dropped by span alignment", set.dropped);
    }
    let unk = model.vocab().unk_id();
    let mut adam = Adam::new(model.params(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::new(HistoryMeta {
        config: cfg.clone(),
        reference_learning_rate: REFERENCE_LEARNING_RATE,
        vocab_size: model.vocab().len(),
        parameter_count: model.parameter_count(),
        train_examples: set.examples.len(),
        dropped_examples: set.dropped,
    });
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut stream(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grads();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let ex = &set.examples[i];
                let mut rng = stream(cfg.seed, EXAMPLE_STREAM_BASE + epoch as u64, i as u64);
                let ctx = apply_slot_value_dropout(&ex.context, &ex.target_spans(), cfg.slot_value_dropout, unk, &mut rng);
                let (bound, grads, loss) = {
                    let mut tape = Tape::new();
                    let bound = model.bind(&mut tape);
                    let dropout = OutputDropout {
                        rng: &mut rng,
                        rate: cfg.encoder_output_dropout,
                    };
                    let out = model.forward(&mut tape, &bound, &ctx, Some(dropout))?;
                    let loss = turn_loss(&mut tape, &out, &ex.targets, cfg.loss_weights)?;
                    let value = tape.value(loss)[0];
                    let scaled = tape.scale(loss, scale);
                    (bound, tape.backward(scaled)?, value)
                };
                if !loss.is_finite() {
                    return Err(NumericError::NonFinite(format!("training loss at epoch {epoch}")).into());
                }
                loss_sum += f64::from(loss);
                model.params_mut().accumulate(&bound, &grads);
            }
            adam.step(model.params_mut())?;
        }
        let train_loss = loss_sum / set.examples.len() as f64;
        let val = validation_accuracy(&model, dev)?;
        history.push(epoch, train_loss, val);
        log::info!("epoch {epoch}: train_loss {train_loss:.4} val_joint_acc {val:.4}");
        let decision = stopper.observe(epoch, val);
        if decision == StopDecision::Improved {
            best = model.clone();
        }
        if cfg.target_accuracy.is_some_and(|t| val >= t) {
            reason = StopReason::TargetReached;
            break;
        }
        if decision == StopDecision::Stop {
            reason = StopReason::Patience;
            break;
        }
    }
    let (best_epoch, best_acc) = stopper.best().expect("at least one epoch ran");
    history.finish(best_epoch, best_acc, reason);
    best.params_mut().zero_grads();
    Ok(TrainOutcome { model: best, history })
}
