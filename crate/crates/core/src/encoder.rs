//! Bidirectional transformer encoder.
//!
//! Input rows are `E_tok(x_i) + E_seg(segment_i) + E_pos(i)`; each layer is
//! multi-head self-attention then a GELU feed-forward block, each wrapped in a
//! residual connection followed by layer normalization (post-LN). Row 0 of the
//! output is the `[CLS]` representation, rows `1..=n` the token representations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::rng::{truncated_normal, DetRng};
use crate::numeric::{BoundParams, NumericError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::tokenizer::EncodedContext;

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const NUM_SEGMENTS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub feed_forward_size: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Dropout inside attention and feed-forward sub-layers.
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid encoder config: {0}")]
pub struct ConfigError(pub String);

impl EncoderConfig {
    /// Desk-scale default: 2 layers, width 32, 2 heads, feed-forward 64.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 32,
            num_heads: 2,
            feed_forward_size: 64,
            max_positions: 64,
            vocab_size,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sizes = [
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("feed_forward_size", self.feed_forward_size),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError(format!("{name} must be at least 1")));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(ConfigError(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ConfigError(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Scalars in one transformer layer.
    pub fn layer_parameter_count(&self) -> usize {
        let (d, ff) = (self.hidden_size, self.feed_forward_size);
        4 * (d * d + d) + (ff * d + ff) + (d * ff + d) + 2 * (2 * d)
    }

    /// Exact scalar count of one encoder's weights.
    pub fn parameter_count(&self) -> usize {
        let d = self.hidden_size;
        (self.vocab_size + NUM_SEGMENTS + self.max_positions) * d + self.num_layers * self.layer_parameter_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub query: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub value: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
    pub attn_norm: (ParamId, ParamId),
    pub ff_in: (ParamId, ParamId),
    pub ff_out: (ParamId, ParamId),
    pub ff_norm: (ParamId, ParamId),
}

/// Handles to one encoder's tensors inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub token_embeddings: ParamId,
    pub segment_embeddings: ParamId,
    pub position_embeddings: ParamId,
    pub layers: Vec<LayerWeights>,
}

/// Tensor names and shapes for one encoder under `prefix`, in store order.
fn layout(prefix: &str, cfg: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff) = (cfg.hidden_size, cfg.feed_forward_size);
    let mut out = vec![
        (format!("{prefix}.token_embeddings"), vec![cfg.vocab_size, d], Init::Normal),
        (format!("{prefix}.segment_embeddings"), vec![NUM_SEGMENTS, d], Init::Normal),
        (format!("{prefix}.position_embeddings"), vec![cfg.max_positions, d], Init::Normal),
    ];
    for l in 0..cfg.num_layers {
        let p = format!("{prefix}.layers.{l}");
        let mut linear = |name: &str, o: usize, i: usize| {
            out.push((format!("{p}.{name}.weight"), vec![o, i], Init::Normal));
            out.push((format!("{p}.{name}.bias"), vec![o], Init::Zeros));
        };
        linear("attention.query", d, d);
        linear("attention.key", d, d);
        linear("attention.value", d, d);
        linear("attention.output", d, d);
        out.push((format!("{p}.attention.norm.gain"), vec![d], Init::Ones));
        out.push((format!("{p}.attention.norm.bias"), vec![d], Init::Zeros));
        let mut linear = |name: &str, o: usize, i: usize| {
            out.push((format!("{p}.{name}.weight"), vec![o, i], Init::Normal));
            out.push((format!("{p}.{name}.bias"), vec![o], Init::Zeros));
        };
        linear("feed_forward.input", ff, d);
        linear("feed_forward.output", d, ff);
        out.push((format!("{p}.feed_forward.norm.gain"), vec![d], Init::Ones));
        out.push((format!("{p}.feed_forward.norm.bias"), vec![d], Init::Zeros));
    }
    out
}

#[derive(Clone, Copy)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

pub(crate) fn init_tensor<T: Scalar>(shape: Vec<usize>, init: Init, rng: &mut DetRng) -> Tensor<T> {
    let len = shape.iter().product();
    let values = match init {
        Init::Normal => truncated_normal(rng, len, INIT_STD),
        Init::Zeros => vec![T::zero(); len],
        Init::Ones => vec![T::one(); len],
    };
    Tensor::param(shape, values).expect("layout shapes are consistent")
}

impl EncoderWeights {
    /// Allocates and initializes a fresh encoder in `store`.
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, cfg: &EncoderConfig, rng: &mut DetRng) -> Self {
        for (name, shape, init) in layout(prefix, cfg) {
            store.add(name, init_tensor(shape, init, rng));
        }
        Self::from_store(store, prefix, cfg).expect("freshly added tensors are present")
    }

    /// Looks up an existing encoder's tensors by name, checking every shape.
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str, cfg: &EncoderConfig) -> Result<Self, String> {
        let mut ids = Vec::new();
        for (name, shape, _) in layout(prefix, cfg) {
            let id = store.find(&name).ok_or_else(|| format!("missing tensor {name}"))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                ));
            }
            ids.push(id);
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("layout length");
        let token_embeddings = next();
        let segment_embeddings = next();
        let position_embeddings = next();
        let layers = (0..cfg.num_layers)
            .map(|_| LayerWeights {
                query: (next(), next()),
                key: (next(), next()),
                value: (next(), next()),
                output: (next(), next()),
                attn_norm: (next(), next()),
                ff_in: (next(), next()),
                ff_out: (next(), next()),
                ff_norm: (next(), next()),
            })
            .collect();
        Ok(Self {
            token_embeddings,
            segment_embeddings,
            position_embeddings,
            layers,
        })
    }
}

/// Sum of token, segment and position embeddings for every context position.
pub fn embed<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bound: &BoundParams,
    w: &EncoderWeights,
    ctx: &EncodedContext,
) -> Result<Var, NumericError> {
    let n = ctx.len();
    let max_positions = tape.shape(bound.get(w.position_embeddings))[0];
    if n > max_positions {
        return Err(NumericError::IndexOutOfRange {
            op: "embed positions",
            index: n,
            len: max_positions,
        });
    }
    let ids: Vec<usize> = ctx.token_ids.iter().map(|&i| i as usize).collect();
    let segs: Vec<usize> = ctx.segment_ids.iter().map(|&s| s as usize).collect();
    let positions: Vec<usize> = (0..n).collect();
    let tok = tape.gather_rows(bound.get(w.token_embeddings), &ids)?;
    let seg = tape.gather_rows(bound.get(w.segment_embeddings), &segs)?;
    let pos = tape.gather_rows(bound.get(w.position_embeddings), &positions)?;
    let sum = tape.add(tok, seg)?;
    tape.add(sum, pos)
}

/// Runs the transformer stack over embedded rows.
///
/// `attention_mask[j] == false` removes position `j` as an attention key.
/// Dropout inside the layers is active only when `rng` is given.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bound: &BoundParams,
    w: &EncoderWeights,
    cfg: &EncoderConfig,
    embeddings: Var,
    attention_mask: &[bool],
    mut rng: Option<&mut DetRng>,
) -> Result<Var, NumericError> {
    let shape = tape.shape(embeddings);
    if shape.len() != 2 || shape[1] != cfg.hidden_size || shape[0] != attention_mask.len() {
        return Err(NumericError::ShapeMismatch {
            op: "encode",
            left: shape.to_vec(),
            right: vec![attention_mask.len(), cfg.hidden_size],
        });
    }
    let eps = T::lit(LAYER_NORM_EPS);
    let dh = cfg.head_dim();
    let inv_sqrt_dh = T::lit(1.0 / (dh as f64).sqrt());
    let training = rng.is_some();
    let rate = cfg.dropout_rate;
    let mut x = embeddings;
    for (index, layer) in w.layers.iter().enumerate() {
        let lin = |tape: &mut Tape<'_, T>, x: Var, (wt, b): (ParamId, ParamId)| tape.linear(x, bound.get(wt), Some(bound.get(b)));
        let q = lin(tape, x, layer.query)?;
        let q = tape.scale(q, inv_sqrt_dh);
        let k = lin(tape, x, layer.key)?;
        let v = lin(tape, x, layer.value)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let (qh, kh, vh) = if cfg.num_heads == 1 {
                (q, k, v)
            } else {
                (tape.cols(q, h * dh, dh)?, tape.cols(k, h * dh, dh)?, tape.cols(v, h * dh, dh)?)
            };
            let scores = tape.linear(qh, kh, None)?;
            let probs = tape.masked_softmax_rows(scores, attention_mask)?;
            let probs = match rng.as_deref_mut() {
                Some(r) => tape.dropout(probs, rate, training, r)?,
                None => probs,
            };
            heads.push(tape.matmul(probs, vh)?);
        }
        let attended = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let attended = lin(tape, attended, layer.output)?;
        let attended = match rng.as_deref_mut() {
            Some(r) => tape.dropout(attended, rate, training, r)?,
            None => attended,
        };
        let residual = tape.add(x, attended)?;
        let h1 = tape.layer_norm(residual, bound.get(layer.attn_norm.0), bound.get(layer.attn_norm.1), eps)?;

        let inner = lin(tape, h1, layer.ff_in)?;
        let inner = tape.gelu(inner);
        let ff = lin(tape, inner, layer.ff_out)?;
        let ff = match rng.as_deref_mut() {
            Some(r) => tape.dropout(ff, rate, training, r)?,
            None => ff,
        };
        let residual = tape.add(h1, ff)?;
        x = tape.layer_norm(residual, bound.get(layer.ff_norm.0), bound.get(layer.ff_norm.1), eps)?;
        if !tape.is_finite(x) {
            return Err(NumericError::NonFinite(format!("encoder layer {index}")));
        }
    }
    Ok(x)
}
