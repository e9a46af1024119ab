use serde::{Deserialize, Serialize};

use super::{ModelError, SlotPrediction, TurnPrediction};
use crate::encoder::{embed, encode, EncoderConfig, EncoderWeights};
use crate::heads::{
    class_logits, decode_span, model_parameter_count, span_logits, ClassDistribution, DecodeMode, SharingMode, SlotClass,
    SlotHeadWeights,
};
use crate::numeric::rng::{stream, DetRng};
use crate::numeric::{BoundParams, NumericError, ParamStore, Scalar, Tape, Var};
use crate::tokenizer::{build_context, ContextOptions, EncodedContext, Source, Vocab};

const ENCODER_STREAM: u64 = 0;
const HEAD_STREAM: u64 = 1;

/// Inference-time switches stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerOptions {
    pub context: ContextOptions,
    pub decode_mode: DecodeMode,
}

/// Training-time randomness for one forward pass.
pub struct OutputDropout<'r> {
    pub rng: &'r mut DetRng,
    /// Rate applied to every encoder output row before the heads.
    pub rate: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SlotOutputs {
    /// `[1 x 3]`
    pub class_logits: Var,
    /// `[n x 1]` over context positions `1..=n`.
    pub start_logits: Var,
    pub end_logits: Var,
}

#[derive(Clone, Debug)]
pub struct TurnOutputs {
    pub slots: Vec<SlotOutputs>,
    /// Number of encoder stacks evaluated for this turn.
    pub encoder_passes: usize,
}

/// Encoder(s), per-slot heads, vocabulary and options: everything needed to
/// track a dialogue.
#[derive(Clone, Debug)]
pub struct ModelBundle<T: Scalar = f32> {
    config: EncoderConfig,
    sharing: SharingMode,
    slots: Vec<String>,
    vocab: Vocab,
    options: TrackerOptions,
    /// Initialization seed, kept for provenance in reports.
    seed: u64,
    store: ParamStore<T>,
    encoders: Vec<EncoderWeights>,
    heads: Vec<SlotHeadWeights>,
}

pub(super) fn encoder_prefix(i: usize) -> String {
    format!("encoders.{i}")
}

pub(super) fn head_prefix(i: usize) -> String {
    format!("heads.{i}")
}

impl<T: Scalar> ModelBundle<T> {
    /// Freshly initialized model. Head weights depend only on `seed` and the
    /// slot index, so PS and SS models built from one seed share them.
    pub fn new(
        config: EncoderConfig,
        sharing: SharingMode,
        slots: Vec<String>,
        vocab: Vocab,
        options: TrackerOptions,
        seed: u64,
    ) -> Result<Self, ModelError> {
        validate(&config, &slots, &vocab, &options)?;
        let mut store = ParamStore::new();
        let num_encoders = match sharing {
            SharingMode::Shared => 1,
            SharingMode::SlotSpecific => slots.len(),
        };
        let encoders = (0..num_encoders)
            .map(|i| {
                let mut rng = stream(seed, ENCODER_STREAM, i as u64);
                EncoderWeights::init(&mut store, &encoder_prefix(i), &config, &mut rng)
            })
            .collect();
        let heads = (0..slots.len())
            .map(|i| {
                let mut rng = stream(seed, HEAD_STREAM, i as u64);
                SlotHeadWeights::init(&mut store, &head_prefix(i), config.hidden_size, &mut rng)
            })
            .collect();
        Ok(Self {
            config,
            sharing,
            slots,
            vocab,
            options,
            seed,
            store,
            encoders,
            heads,
        })
    }

    /// Reassembles a bundle from named tensors, checking every shape.
    pub(crate) fn from_parts(
        config: EncoderConfig,
        sharing: SharingMode,
        slots: Vec<String>,
        vocab: Vocab,
        options: TrackerOptions,
        seed: u64,
        store: ParamStore<T>,
    ) -> Result<Self, ModelError> {
        validate(&config, &slots, &vocab, &options)?;
        let num_encoders = match sharing {
            SharingMode::Shared => 1,
            SharingMode::SlotSpecific => slots.len(),
        };
        let encoders = (0..num_encoders)
            .map(|i| EncoderWeights::from_store(&store, &encoder_prefix(i), &config))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ModelError::Malformed)?;
        let heads = (0..slots.len())
            .map(|i| SlotHeadWeights::from_store(&store, &head_prefix(i), config.hidden_size))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ModelError::Malformed)?;
        let expected = model_parameter_count(&config, slots.len(), sharing);
        if store.scalar_count() != expected {
            return Err(ModelError::Malformed(format!(
                "{} scalars stored, layout needs {expected}",
                store.scalar_count()
            )));
        }
        Ok(Self {
            config,
            sharing,
            slots,
            vocab,
            options,
            seed,
            store,
            encoders,
            heads,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn sharing(&self) -> SharingMode {
        self.sharing
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn options(&self) -> &TrackerOptions {
        &self.options
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_decode_mode(&mut self, mode: DecodeMode) {
        self.options.decode_mode = mode;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoders(&self) -> &[EncoderWeights] {
        &self.encoders
    }

    pub fn heads(&self) -> &[SlotHeadWeights] {
        &self.heads
    }

    /// Scalars actually held by the bundle.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config,
            sharing: self.sharing,
            slots: self.slots.clone(),
            vocab: self.vocab.clone(),
            options: self.options,
            seed: self.seed,
            store: self.store.cast(),
            encoders: self.encoders.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Slot-specific copy of a shared model: every slot gets its own clone of
    /// the shared encoder, heads unchanged.
    pub fn to_slot_specific(&self) -> Result<ModelBundle<T>, ModelError> {
        if self.sharing == SharingMode::SlotSpecific {
            return Ok(self.clone());
        }
        let mut store = ParamStore::new();
        for i in 0..self.slots.len() {
            for (name, tensor) in self.store.iter() {
                if let Some(rest) = name.strip_prefix(&format!("{}.", encoder_prefix(0))) {
                    store.add(format!("{}.{rest}", encoder_prefix(i)), tensor.clone());
                }
            }
        }
        for (name, tensor) in self.store.iter() {
            if name.starts_with("heads.") {
                store.add(name, tensor.clone());
            }
        }
        ModelBundle::from_parts(
            self.config,
            SharingMode::SlotSpecific,
            self.slots.clone(),
            self.vocab.clone(),
            self.options,
            self.seed,
            store,
        )
    }

    pub fn encode_context(&self, system: &str, user: &str) -> EncodedContext {
        build_context(system, user, &self.vocab, self.options.context)
    }

    /// Binds every parameter into `tape`; pass the result to [`Self::forward`].
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>) -> BoundParams {
        self.store.bind(tape)
    }

    /// Class and span logits for every slot. Dropout (encoder-internal and
    /// on the encoder outputs) is active only when `dropout` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        bound: &BoundParams,
        ctx: &EncodedContext,
        mut dropout: Option<OutputDropout<'_>>,
    ) -> Result<TurnOutputs, NumericError> {
        let n = ctx.len();
        if n < 2 {
            return Err(NumericError::InvalidArgument {
                op: "forward",
                msg: "context needs [CLS] and at least one more position".into(),
            });
        }
        let mut run_encoder = |tape: &mut Tape<'_, T>, w: &EncoderWeights| -> Result<(Var, Var), NumericError> {
            let x = embed(tape, bound, w, ctx)?;
            let h = match dropout.as_mut() {
                Some(d) => {
                    let h = encode(tape, bound, w, &self.config, x, &ctx.attention_mask, Some(&mut *d.rng))?;
                    tape.dropout(h, d.rate, true, &mut *d.rng)?
                }
                None => encode(tape, bound, w, &self.config, x, &ctx.attention_mask, None)?,
            };
            Ok((tape.rows(h, 0, 1)?, tape.rows(h, 1, n - 1)?))
        };
        let mut slots = Vec::with_capacity(self.heads.len());
        let mut encoder_passes = 0;
        let mut shared = None;
        for (i, head) in self.heads.iter().enumerate() {
            let (t0, tokens) = match self.sharing {
                SharingMode::Shared => match shared {
                    Some(out) => out,
                    None => {
                        encoder_passes += 1;
                        let out = run_encoder(tape, &self.encoders[0])?;
                        shared = Some(out);
                        out
                    }
                },
                SharingMode::SlotSpecific => {
                    encoder_passes += 1;
                    run_encoder(tape, &self.encoders[i])?
                }
            };
            let class = class_logits(tape, bound, head, t0)?;
            let (start, end) = span_logits(tape, bound, head, tokens)?;
            slots.push(SlotOutputs {
                class_logits: class,
                start_logits: start,
                end_logits: end,
            });
        }
        Ok(TurnOutputs { slots, encoder_passes })
    }

    /// Turn-level prediction with dropout disabled.
    pub fn predict_turn(&self, system: &str, user: &str) -> Result<TurnPrediction, ModelError> {
        let ctx = self.encode_context(system, user);
        self.predict_context(&ctx, system, user)
    }

    /// Like [`Self::predict_turn`] for an already built context.
    pub fn predict_context(&self, ctx: &EncodedContext, system: &str, user: &str) -> Result<TurnPrediction, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, ctx, None)?;
        let valid = ctx.span_positions();
        let system: Vec<char> = system.chars().collect();
        let user: Vec<char> = user.chars().collect();
        let mut turn = TurnPrediction::default();
        for (name, o) in self.slots.iter().zip(&out.slots) {
            let dist = ClassDistribution::from_logits(tape.value(o.class_logits));
            let pred = match dist.argmax() {
                SlotClass::None => SlotPrediction::none(),
                SlotClass::DontCare => SlotPrediction::dontcare(),
                SlotClass::Span => {
                    let alpha: Vec<f64> = tape.value(o.start_logits).iter().map(|v| v.as_f64()).collect();
                    let beta: Vec<f64> = tape.value(o.end_logits).iter().map(|v| v.as_f64()).collect();
                    match decode_span(&alpha, &beta, &valid, self.options.decode_mode) {
                        Ok((i, j)) => {
                            let start = i + 1;
                            let end = (j + 1).min(ctx.segment_end(start));
                            let value = extract_value(ctx, start, end, &system, &user)
                                .expect("decoded positions carry character spans");
                            SlotPrediction::span(start, end, value)
                        }
                        Err(_) => SlotPrediction::none(),
                    }
                }
            };
            turn.0.insert(name.clone(), pred);
        }
        Ok(turn)
    }
}

/// Original-casing text under context positions `start..=end`.
pub(crate) fn extract_value(ctx: &EncodedContext, start: usize, end: usize, system: &[char], user: &[char]) -> Option<String> {
    let span = ctx.char_span(start, end)?;
    let text = match span.source {
        Source::System => system,
        Source::User => user,
    };
    Some(text.get(span.start..span.end)?.iter().collect())
}

fn validate(config: &EncoderConfig, slots: &[String], vocab: &Vocab, options: &TrackerOptions) -> Result<(), ModelError> {
    config.validate()?;
    if slots.is_empty() {
        return Err(ModelError::Invalid("at least one slot is required".into()));
    }
    let mut sorted: Vec<&String> = slots.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(ModelError::Invalid(format!("duplicate slot {}", w[0])));
    }
    if vocab.len() != config.vocab_size {
        return Err(ModelError::Invalid(format!(
            "vocabulary has {} tokens, config expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    if options.context.max_len > config.max_positions || options.context.max_len < 4 {
        return Err(ModelError::Invalid(format!(
            "context max_len {} must be in [4, {}]",
            options.context.max_len, config.max_positions
        )));
    }
    Ok(())
}
