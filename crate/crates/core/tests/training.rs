use proptest::prelude::*;
use rand::Rng;
use spantrack::encoder::EncoderConfig;
use spantrack::heads::{SharingMode, SlotClass};
use spantrack::numeric::rng::seeded;
use spantrack::numeric::Tape;
use spantrack::tokenizer::{build_context, ContextOptions, Vocab};
use spantrack::tracker::{ModelBundle, TrackerOptions};
use spantrack::training::{apply_slot_value_dropout, replace_span_tokens, turn_loss, LossWeights, SlotTarget};

const SYSTEM: &str = "what time and how many";
const USER: &str = "two people at 7 pm on friday";

fn model(sharing: SharingMode) -> ModelBundle<f64> {
    let vocab = Vocab::build([SYSTEM, USER], 100);
    let cfg = EncoderConfig {
        num_layers: 1,
        hidden_size: 8,
        num_heads: 2,
        feed_forward_size: 16,
        max_positions: 64,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
    };
    let slots = ["people", "time", "date"].map(String::from).to_vec();
    let m: ModelBundle = ModelBundle::new(cfg, sharing, slots, vocab, TrackerOptions::default(), 4).unwrap();
    let mut m = m.cast::<f64>();
    let mut rng = seeded(1);
    for t in m.params_mut().tensors_mut() {
        for v in t.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    m
}

fn span(s: usize, e: usize) -> SlotTarget {
    SlotTarget {
        class: SlotClass::Span,
        span: Some((s, e)),
    }
}

fn none() -> SlotTarget {
    SlotTarget {
        class: SlotClass::None,
        span: None,
    }
}

/// Gradient of the turn loss for every named parameter, zeros where unreached.
fn grads(m: &ModelBundle<f64>, targets: &[SlotTarget], weights: LossWeights) -> Vec<(String, Vec<f64>)> {
    let ctx = m.encode_context(SYSTEM, USER);
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape);
    let out = m.forward(&mut tape, &bound, &ctx, None).unwrap();
    let loss = turn_loss(&mut tape, &out, targets, weights).unwrap();
    let g = tape.backward(loss).unwrap();
    m.params()
        .iter()
        .map(|(name, t)| {
            let id = m.params().find(name).unwrap();
            (name.to_string(), g.wrt(bound.get(id)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        })
        .collect()
}

fn of<'a>(g: &'a [(String, Vec<f64>)], prefix: &str) -> Vec<&'a (String, Vec<f64>)> {
    g.iter().filter(|(n, _)| n.starts_with(prefix)).collect()
}

#[test]
fn zero_span_weights_leave_span_heads_untouched() {
    let m = model(SharingMode::Shared);
    let weights = LossWeights {
        class: 1.0,
        start: 0.0,
        end: 0.0,
    };
    let g = grads(&m, &[span(6, 6), span(8, 9), none()], weights);
    for (name, values) in g.iter().filter(|(n, _)| n.contains(".span.")) {
        assert!(values.iter().all(|v| *v == 0.0), "{name}");
    }
    assert!(g.iter().filter(|(n, _)| n.contains(".class.")).all(|(_, v)| v.iter().any(|x| *x != 0.0)));
}

#[test]
fn slot_specific_encoders_only_see_their_slot() {
    let m = model(SharingMode::SlotSpecific);
    let w = LossWeights::default();
    let base = grads(&m, &[span(6, 6), span(8, 9), none()], w);
    let changed = grads(&m, &[span(6, 6), none(), span(11, 11)], w);
    assert_eq!(of(&base, "encoders.0."), of(&changed, "encoders.0."));
    assert_eq!(of(&base, "heads.0."), of(&changed, "heads.0."));
    for i in [1, 2] {
        assert_ne!(of(&base, &format!("encoders.{i}.")), of(&changed, &format!("encoders.{i}.")));
    }
}

#[test]
fn shared_encoder_receives_every_slot() {
    let m = model(SharingMode::Shared);
    let w = LossWeights::default();
    let base_targets = [span(6, 6), span(8, 9), none()];
    let base = grads(&m, &base_targets, w);
    let alternatives = [span(2, 2), none(), span(11, 11)];
    for j in 0..3 {
        let mut t = base_targets;
        t[j] = alternatives[j];
        let g = grads(&m, &t, w);
        assert_ne!(of(&base, "encoders.0."), of(&g, "encoders.0."), "slot {j}");
        for k in (0..3).filter(|k| *k != j) {
            assert_eq!(of(&base, &format!("heads.{k}.")), of(&g, &format!("heads.{k}.")), "slot {j} head {k}");
        }
    }
}

proptest! {
    #[test]
    fn slot_value_dropout_only_touches_spans(
        spans in prop::collection::vec((1usize..12, 0usize..3), 0..3),
        p in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let vocab = Vocab::build([SYSTEM, USER], 100);
        let ctx = build_context(SYSTEM, USER, &vocab, ContextOptions::default());
        let n = ctx.last_index();
        let spans: Vec<(usize, usize)> = spans.into_iter().map(|(s, w)| (s.min(n), (s + w).min(n))).collect();
        let out = apply_slot_value_dropout(&ctx, &spans, p, vocab.unk_id(), &mut seeded(seed));
        prop_assert_eq!(out.len(), ctx.len());
        prop_assert_eq!(&out.token_spans, &ctx.token_spans);
        prop_assert_eq!(&out.segment_ids, &ctx.segment_ids);
        for i in 0..ctx.len() {
            if out.token_ids[i] != ctx.token_ids[i] {
                prop_assert!(spans.iter().any(|&(s, e)| (s..=e).contains(&i)));
                prop_assert_eq!(out.token_ids[i], vocab.unk_id());
            }
        }
    }

    #[test]
    fn each_span_position_is_offered_once_in_order(
        spans in prop::collection::vec((1usize..12, 0usize..4), 0..4),
    ) {
        let vocab = Vocab::build([SYSTEM, USER], 100);
        let ctx = build_context(SYSTEM, USER, &vocab, ContextOptions::default());
        let spans: Vec<(usize, usize)> = spans.into_iter().map(|(s, w)| (s, s + w)).collect();
        let mut offered = Vec::new();
        replace_span_tokens(&ctx, &spans, vocab.unk_id(), |p| {
            offered.push(p);
            false
        });
        let mut want: Vec<usize> = spans.iter().flat_map(|&(s, e)| s..=e).filter(|p| *p < ctx.len()).collect();
        want.sort();
        want.dedup();
        prop_assert_eq!(offered, want);
    }
}
