//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use spantrack::data::{generate_synthetic, slot_values, Corpus, GeneratorProfile};
use spantrack::encoder::EncoderConfig;
use spantrack::eval::{evaluate, joint_goal_accuracy, per_slot_accuracy, run_svd_ablation};
use spantrack::heads::{decode_span, model_parameter_count, DecodeError, DecodeMode, SharingMode, SlotClass};
use spantrack::numeric::gradcheck::{max_relative_error, relative_error, STEP};
use spantrack::numeric::rng::seeded;
use spantrack::numeric::{NumericError, Tape, Tensor, Var};
use spantrack::tokenizer::{build_context, ContextOptions, Vocab};
use spantrack::tracker::{fold_states, track_dialogue, DialogueState, ModelBundle, SlotPrediction, SlotValue, TrackerOptions, TurnPrediction};
use spantrack::training::{train, turn_loss, EncoderShape, LossWeights, SlotTarget, TrainConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce(&mut Evaluated) -> Check>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, budget: Duration) -> Result<(), String> {
    let spent = started.elapsed();
    ensure(spent < budget, || format!("took {spent:.1?}, budget {budget:?}"))
}

/// Accuracies of every corpus evaluated during the run.
#[derive(Default)]
struct Evaluated(Vec<(String, f64, BTreeMap<String, f64>)>);

impl Evaluated {
    fn add(&mut self, name: impl Into<String>, joint: f64, per_slot: &BTreeMap<String, f64>) {
        self.0.push((name.into(), joint, per_slot.clone()));
    }
}

// Criterion 1

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed random weights so that no gradient
/// cancels by symmetry.
fn probe(tp: &mut Tape<'_, f64>, out: Var, seed: u64) -> Result<Var, NumericError> {
    let shape = tp.shape(out).to_vec();
    let w = tp.leaf(random_tensor(&mut seeded(seed), &shape));
    let m = tp.mul(out, w)?;
    Ok(tp.sum(m))
}

type Build = Box<dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericError>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|tp, v| {
            let o = tp.matmul(v[0], v[1])?;
            probe(tp, o, 1)
        })),
        ("linear", vec![vec![3, 4], vec![5, 4], vec![5]], Box::new(|tp, v| {
            let o = tp.linear(v[0], v[1], Some(v[2]))?;
            probe(tp, o, 2)
        })),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|tp, v| {
            let o = tp.add(v[0], v[1])?;
            probe(tp, o, 3)
        })),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|tp, v| {
            let o = tp.mul(v[0], v[1])?;
            probe(tp, o, 4)
        })),
        ("scale", vec![vec![4]], Box::new(|tp, v| {
            let o = tp.scale(v[0], -1.7);
            probe(tp, o, 5)
        })),
        ("sum", vec![vec![2, 2]], Box::new(|tp, v| {
            let s = tp.sum(v[0]);
            tp.mul(s, s)
        })),
        ("reshape", vec![vec![2, 3]], Box::new(|tp, v| {
            let o = tp.reshape(v[0], vec![3, 2])?;
            probe(tp, o, 6)
        })),
        ("transpose", vec![vec![2, 3]], Box::new(|tp, v| {
            let o = tp.transpose(v[0])?;
            probe(tp, o, 7)
        })),
        ("gather_rows", vec![vec![4, 3]], Box::new(|tp, v| {
            let o = tp.gather_rows(v[0], &[2, 0, 2])?;
            probe(tp, o, 8)
        })),
        ("softmax axis 0", vec![vec![3, 4]], Box::new(|tp, v| {
            let o = tp.softmax(v[0], 0)?;
            probe(tp, o, 9)
        })),
        ("softmax axis 1", vec![vec![3, 4]], Box::new(|tp, v| {
            let o = tp.softmax(v[0], 1)?;
            probe(tp, o, 10)
        })),
        ("masked_softmax_rows", vec![vec![3, 4]], Box::new(|tp, v| {
            let o = tp.masked_softmax_rows(v[0], &[true, false, true, true])?;
            probe(tp, o, 11)
        })),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], Box::new(|tp, v| {
            let o = tp.layer_norm(v[0], v[1], v[2], 1e-12)?;
            probe(tp, o, 12)
        })),
        ("gelu", vec![vec![2, 5]], Box::new(|tp, v| {
            let o = tp.gelu(v[0]);
            probe(tp, o, 13)
        })),
        ("dropout", vec![vec![3, 4]], Box::new(|tp, v| {
            let o = tp.dropout(v[0], 0.3, true, &mut seeded(14))?;
            probe(tp, o, 14)
        })),
        ("cross_entropy", vec![vec![6, 1]], Box::new(|tp, v| tp.cross_entropy(v[0], 4))),
        ("rows", vec![vec![4, 3]], Box::new(|tp, v| {
            let o = tp.rows(v[0], 1, 2)?;
            probe(tp, o, 15)
        })),
        ("cols", vec![vec![3, 4]], Box::new(|tp, v| {
            let o = tp.cols(v[0], 1, 2)?;
            probe(tp, o, 16)
        })),
        ("concat_cols", vec![vec![3, 2], vec![3, 1]], Box::new(|tp, v| {
            let o = tp.concat_cols(&[v[0], v[1]])?;
            probe(tp, o, 17)
        })),
    ]
}

/// Central differences over every scalar of a model against the tape gradient of the turn loss.
fn model_loss_error(model: &mut ModelBundle<f64>, system: &str, user: &str, targets: &[SlotTarget]) -> Result<f64, String> {
    let ctx = model.encode_context(system, user);
    let loss_of = |m: &ModelBundle<f64>| -> Result<f64, NumericError> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let out = m.forward(&mut tape, &bound, &ctx, None)?;
        let l = turn_loss(&mut tape, &out, targets, LossWeights::default())?;
        Ok(tape.value(l)[0])
    };
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &ctx, None).map_err(|e| e.to_string())?;
        let l = turn_loss(&mut tape, &out, targets, LossWeights::default()).map_err(|e| e.to_string())?;
        let grads = tape.backward(l).map_err(|e| e.to_string())?;
        model
            .params()
            .iter()
            .map(|(name, t)| {
                let id = model.params().find(name).unwrap();
                let g = grads.wrt(bound.get(id)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
                (name.to_string(), g)
            })
            .collect()
    };
    let mut worst = 0.0f64;
    for (name, grad) in analytic {
        let id = model.params().find(&name).unwrap();
        for (i, &a) in grad.iter().enumerate() {
            let x = model.params().get(id).values()[i];
            model.params_mut().get_mut(id).values_mut()[i] = x + STEP;
            let plus = loss_of(model).map_err(|e| e.to_string())?;
            model.params_mut().get_mut(id).values_mut()[i] = x - STEP;
            let minus = loss_of(model).map_err(|e| e.to_string())?;
            model.params_mut().get_mut(id).values_mut()[i] = x;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

fn criterion_1() -> Check {
    let started = Instant::now();
    let mut worst_op = ("", 0.0f64);
    let mut rng = seeded(100);
    for (name, shapes, build) in op_cases() {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let err = max_relative_error(&inputs, build).map_err(|e| format!("{name}: {e}"))?;
        ensure(err < 1e-3, || format!("{name}: relative error {err:.2e}"))?;
        if err >= worst_op.1 {
            worst_op = (name, err);
        }
    }

    let vocab = Vocab::build(["book a table for 7 pm please"], 100);
    let cfg = EncoderConfig {
        num_layers: 2,
        hidden_size: 8,
        num_heads: 2,
        feed_forward_size: 16,
        max_positions: 8,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
    };
    let options = TrackerOptions {
        context: ContextOptions {
            max_len: 8,
            append_final_sep: false,
        },
        decode_mode: DecodeMode::Independent,
    };
    let slots = vec!["time".to_string(), "people".to_string()];
    let (system, user) = ("a table", "for 7 pm");
    let ctx = build_context(system, user, &vocab, options.context);
    ensure(ctx.len() <= 8, || format!("context has {} tokens", ctx.len()))?;
    let span = |s, e| SlotTarget {
        class: SlotClass::Span,
        span: Some((s, e)),
    };
    let plain = |class| SlotTarget { class, span: None };
    let target_sets = [
        vec![span(5, 6), plain(SlotClass::DontCare)],
        vec![plain(SlotClass::None), span(1, 2)],
    ];
    let mut worst_model = 0.0f64;
    for sharing in [SharingMode::Shared, SharingMode::SlotSpecific] {
        let base: ModelBundle = ModelBundle::new(cfg, sharing, slots.clone(), vocab.clone(), options, 3).map_err(|e| e.to_string())?;
        let mut model: ModelBundle<f64> = base.cast();
        // Move away from the near-zero initialization so every nonlinearity is exercised.
        let mut rng = seeded(7);
        for t in model.params_mut().tensors_mut() {
            for v in t.values_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        for targets in &target_sets {
            let err = model_loss_error(&mut model, system, user, targets)?;
            ensure(err < 1e-3, || format!("{sharing:?} turn loss: relative error {err:.2e}"))?;
            worst_model = worst_model.max(err);
        }
    }
    within(started, Duration::from_secs(60))?;
    Ok(format!(
        "worst op {} {:.1e}, worst turn loss {:.1e}, {:.1?}",
        worst_op.0,
        worst_op.1,
        worst_model,
        started.elapsed()
    ))
}

// Criterion 2

fn criterion_2(evaluated: &mut Evaluated) -> Check {
    let started = Instant::now();
    let splits = generate_synthetic(&GeneratorProfile::sim_m_like(7).with_sizes(50, 1, 1)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 200,
        target_accuracy: Some(0.95),
        sharing: SharingMode::Shared,
        ..TrainConfig::default()
    };
    ensure(cfg.encoder == EncoderShape::default(), || "not the desk encoder".into())?;
    let outcome = train(&splits.train, &splits.train, &cfg).map_err(|e| e.to_string())?;
    let report = evaluate(&outcome.model, &splits.train).map_err(|e| e.to_string())?;
    evaluated.add("overfit train", report.joint_goal_accuracy, &report.per_slot_accuracy);
    let epochs = outcome.history.epochs.len();
    ensure(report.joint_goal_accuracy >= 0.95, || {
        format!("train joint goal accuracy {:.4} after {epochs} epochs", report.joint_goal_accuracy)
    })?;
    within(started, Duration::from_secs(600))?;
    Ok(format!(
        "train joint goal accuracy {:.4} after {epochs} epochs, {:.1?}",
        report.joint_goal_accuracy,
        started.elapsed()
    ))
}

// Criterion 3

fn criterion_3(evaluated: &mut Evaluated) -> Check {
    let started = Instant::now();
    let profile = GeneratorProfile::sim_m_like(11);
    ensure(
        (profile.train_dialogues, profile.dev_dialogues, profile.test_dialogues) == (400, 100, 200),
        || "profile sizes are not 400/100/200".into(),
    )?;
    let splits = generate_synthetic(&profile).map_err(|e| e.to_string())?;
    let oov = profile.oov_slots();
    let (train_values, test_values) = (slot_values(&splits.train), slot_values(&splits.test));
    for slot in &oov {
        let shared = test_values[slot].intersection(&train_values[slot]).count();
        ensure(shared == 0, || format!("{slot}: {shared} test values also in train"))?;
    }
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 6,
        ..TrainConfig::default()
    };
    let seeds = [1, 2, 3, 4, 5];
    let table = run_svd_ablation(&splits.train, &splits.dev, &splits.test, &cfg, &[0.0, 0.3], &seeds, Some(oov.clone()))
        .map_err(|e| e.to_string())?;
    for r in &table.rows {
        evaluated.add(format!("svd p={} seed={}", r.slot_value_dropout, r.seed), r.test_joint_acc, &r.per_slot_accuracy);
    }
    let mut worst_non_oov = 1.0f64;
    for r in table.rows.iter().filter(|r| r.slot_value_dropout == 0.3) {
        for (slot, acc) in r.per_slot_accuracy.iter().filter(|(s, _)| !oov.contains(s)) {
            ensure(*acc >= 0.9, || format!("seed {}: {slot} accuracy {acc:.4} at p=0.3", r.seed))?;
            worst_non_oov = worst_non_oov.min(*acc);
        }
    }
    let (m0, m3) = (table.median_oov_acc(0.0).unwrap(), table.median_oov_acc(0.3).unwrap());
    ensure(m3 > m0, || format!("median OOV accuracy {m3:.4} at p=0.3 vs {m0:.4} at p=0"))?;
    within(started, Duration::from_secs(1800))?;
    Ok(format!(
        "worst non-OOV slot {worst_non_oov:.4}; median {} accuracy {m0:.4} (p=0) < {m3:.4} (p=0.3) over {} seeds, {:.1?}",
        oov.join(","),
        seeds.len(),
        started.elapsed()
    ))
}

// Criterion 4

/// Counts stored scalars by walking the file layout directly.
fn count_file_scalars(bytes: &[u8]) -> Result<usize, String> {
    let mut pos = 0usize;
    let u32_at = |pos: &mut usize| -> Result<usize, String> {
        let b = bytes.get(*pos..*pos + 4).ok_or("truncated")?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    ensure(bytes.starts_with(b"BDST"), || "bad magic".into())?;
    pos += 4;
    u32_at(&mut pos)?;
    let header = u32_at(&mut pos)?;
    pos += header;
    let blocks = u32_at(&mut pos)?;
    let mut total = 0;
    for _ in 0..blocks {
        let name = u32_at(&mut pos)?;
        pos += name;
        let ndim = u32_at(&mut pos)?;
        let mut n = 1;
        for _ in 0..ndim {
            n *= u32_at(&mut pos)?;
        }
        pos += 4 * n;
        total += n;
    }
    ensure(pos + 4 == bytes.len(), || format!("{} bytes left after blocks", bytes.len() - pos))?;
    Ok(total)
}

fn criterion_4() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let vocab = Vocab::build(["book a table for two at seven"], 50);
    let configs = [
        EncoderConfig::desk(vocab.len()),
        EncoderConfig {
            num_layers: 1,
            hidden_size: 8,
            num_heads: 2,
            feed_forward_size: 12,
            max_positions: 64,
            vocab_size: vocab.len(),
            dropout_rate: 0.1,
        },
    ];
    let mut checked = 0;
    for cfg in configs {
        for k in [1usize, 2, 5, 9] {
            let slots: Vec<String> = (0..k).map(|i| format!("slot{i}")).collect();
            let enc = cfg.parameter_count();
            let (ps, ss) = (
                model_parameter_count(&cfg, k, SharingMode::Shared),
                model_parameter_count(&cfg, k, SharingMode::SlotSpecific),
            );
            ensure(ss - ps == (k - 1) * enc, || format!("formula: k={k} SS-PS={} enc={enc}", ss - ps))?;
            let mut stored = Vec::new();
            for (sharing, formula) in [(SharingMode::Shared, ps), (SharingMode::SlotSpecific, ss)] {
                let model = ModelBundle::new(cfg, sharing, slots.clone(), vocab.clone(), TrackerOptions::default(), 1)
                    .map_err(|e| e.to_string())?;
                let path = dir.path().join(format!("{k}-{sharing:?}.bdst"));
                model.save(&path).map_err(|e| e.to_string())?;
                let n = count_file_scalars(&std::fs::read(&path).map_err(|e| e.to_string())?)?;
                ensure(n == formula, || format!("{sharing:?} k={k}: file {n} vs formula {formula}"))?;
                stored.push(n);
            }
            ensure(stored[1] - stored[0] == (k - 1) * enc, || format!("files: k={k}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (config, k) pairs agree by formula and by file scalar count"))
}

// Criterion 5

fn brute_fold(turns: &[TurnPrediction]) -> Vec<HashMap<String, String>> {
    let mut state: HashMap<String, String> = HashMap::new();
    let mut out = Vec::new();
    for turn in turns {
        for (slot, p) in &turn.0 {
            if p.class == SlotClass::DontCare {
                state.insert(slot.clone(), "dontcare".to_string());
            } else if p.class == SlotClass::Span {
                state.insert(slot.clone(), p.value.clone().unwrap());
            }
        }
        out.push(state.clone());
    }
    out
}

fn as_map(state: &DialogueState) -> HashMap<String, String> {
    state
        .iter()
        .map(|(k, v)| {
            let v = match v {
                SlotValue::DontCare => "dontcare".to_string(),
                SlotValue::Value(s) => s.clone(),
            };
            (k.to_string(), v)
        })
        .collect()
}

fn criterion_5() -> Check {
    let mut rng = seeded(5);
    let slots = ["date", "time", "movie", "num_tickets"];
    let values = ["7 pm", "7 PM", "friday", "the big one", "2", "x"];
    let sequences = 10_000;
    for n in 0..sequences {
        let len = rng.random_range(0..8);
        let turns: Vec<TurnPrediction> = (0..len)
            .map(|_| {
                let mut turn = TurnPrediction::default();
                for s in slots {
                    if rng.random_bool(0.1) {
                        continue;
                    }
                    let p = match rng.random_range(0..3) {
                        0 => SlotPrediction::none(),
                        1 => SlotPrediction::dontcare(),
                        _ => SlotPrediction::span(1, 2, values[rng.random_range(0..values.len())]),
                    };
                    turn.0.insert(s.to_string(), p);
                }
                turn
            })
            .collect();
        let got: Vec<_> = fold_states(&turns).iter().map(as_map).collect();
        ensure(got == brute_fold(&turns), || format!("sequence {n} differs"))?;
    }
    Ok(format!("{sequences} sequences match"))
}

// Criterion 6

fn masked_probs(x: &[f64], valid: &[bool]) -> Vec<f64> {
    let m = x.iter().zip(valid).filter(|(_, v)| **v).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().zip(valid).map(|(x, v)| if *v { (x - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn exhaustive(s: &[f64], e: &[f64], valid: &[bool]) -> (usize, usize) {
    let (ps, pe) = (masked_probs(s, valid), masked_probs(e, valid));
    let mut best = (0, 0, -1.0);
    for i in 0..s.len() {
        for j in i..s.len() {
            if valid[i] && valid[j] && ps[i] * pe[j] > best.2 {
                best = (i, j, ps[i] * pe[j]);
            }
        }
    }
    (best.0, best.1)
}

fn criterion_6() -> Check {
    let mut rng = seeded(6);
    let (mut legal, mut joint_checked) = (0, 0);
    for case in 0..20_000 {
        let n = rng.random_range(1..=48);
        let scale = [1.0, 5.0, 50.0][case % 3];
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        for mode in [DecodeMode::Independent, DecodeMode::Joint] {
            match decode_span(&s, &e, &valid, mode) {
                Ok((a, b)) => {
                    let (start, end) = (a + 1, b + 1);
                    ensure(1 <= start && start <= end && end <= n && valid[a] && valid[b], || {
                        format!("case {case} {mode:?}: span ({start}, {end}) of {n}")
                    })?;
                    legal += 1;
                    if mode == DecodeMode::Joint && n <= 12 {
                        let want = exhaustive(&s, &e, &valid);
                        ensure((a, b) == want, || format!("case {case}: joint {:?} vs exhaustive {want:?}", (a, b)))?;
                        joint_checked += 1;
                    }
                }
                Err(DecodeError::NoValidPositions) => {
                    ensure(!valid.contains(&true), || format!("case {case}: spurious NoValidPositions"))?;
                }
                Err(err) => return Err(format!("case {case}: {err}")),
            }
        }
    }
    Ok(format!("{legal} decoded spans legal, {joint_checked} joint decodes match enumeration"))
}

// Criterion 7

fn random_state(rng: &mut impl Rng, slots: &[&str]) -> DialogueState {
    let values = ["a", "A", "b", "dontcare"];
    let mut state = DialogueState::new();
    for s in slots {
        if rng.random_bool(0.6) {
            state.set(*s, SlotValue::from(values[rng.random_range(0..values.len())]));
        }
    }
    state
}

fn criterion_7(evaluated: &Evaluated) -> Check {
    let mut rng = seeded(7);
    let slots = ["s0", "s1", "s2"];
    let schema: Vec<String> = slots.iter().map(|s| s.to_string()).collect();
    let cases = 5_000;
    for case in 0..cases {
        let n = rng.random_range(0..15);
        let gold: Vec<DialogueState> = (0..n).map(|_| random_state(&mut rng, &slots)).collect();
        let pred: Vec<DialogueState> = (0..n).map(|_| random_state(&mut rng, &slots)).collect();
        let mut hits = 0;
        for t in 0..n {
            let all = slots.iter().all(|s| {
                let p = pred[t].get(s).map(|v| v.as_str().to_lowercase());
                let g = gold[t].get(s).map(|v| v.as_str().to_lowercase());
                p == g
            });
            hits += usize::from(all);
        }
        let want = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        let joint = joint_goal_accuracy(&pred, &gold, &schema).map_err(|e| e.to_string())?;
        ensure(joint == want, || format!("case {case}: {joint} vs brute force {want}"))?;
        let per = per_slot_accuracy(&pred, &gold, &schema).map_err(|e| e.to_string())?;
        ensure(per.values().all(|a| joint <= *a), || format!("case {case}: joint above a slot"))?;
    }
    for (name, joint, per) in &evaluated.0 {
        let min = per.values().copied().fold(f64::INFINITY, f64::min);
        ensure(*joint <= min, || format!("{name}: joint {joint} > min per-slot {min}"))?;
    }
    Ok(format!("{cases} randomized cases match, joint <= min per-slot on {} evaluated corpora", evaluated.0.len()))
}

// Criterion 8

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spantrack")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn cli_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    std::fs::write(p("config.json"), r#"{"max_epochs": 4, "slot_value_dropout": 0.3, "seed": 9}"#).map_err(|e| e.to_string())?;
    cli(&["gen-data", "--profile", "sim-r-like", "--seed", "4", "--out", &p("data"), "--train-dialogues", "30", "--dev-dialogues", "10", "--test-dialogues", "10"])?;
    cli(&["train", "--train", &p("data/train.json"), "--dev", &p("data/dev.json"), "--config", &p("config.json"), "--out", &p("model.bdst")])?;
    cli(&["eval", "--model", &p("model.bdst"), "--corpus", &p("data/test.json"), "--report", &p("report.json")])?;
    let mut files = Vec::new();
    for name in ["data/train.json", "data/dev.json", "data/test.json", "data/stats.json", "model.bdst", "report.json"] {
        files.push((name.to_string(), std::fs::read(dir.join(name)).map_err(|e| e.to_string())?));
    }
    // Epoch lines carry wall-clock timestamps; everything else must match.
    let history = std::fs::read_to_string(dir.join("model.bdst.history.jsonl")).map_err(|e| e.to_string())?;
    let stripped: String = history
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("timestamp");
            }
            v.to_string() + "\n"
        })
        .collect();
    files.push(("history".into(), stripped.into_bytes()));
    Ok(files)
}

fn criterion_8() -> Check {
    let profile = GeneratorProfile::sim_m_like(21).with_sizes(40, 10, 10);
    let (a, b) = (generate_synthetic(&profile).map_err(|e| e.to_string())?, generate_synthetic(&profile).map_err(|e| e.to_string())?);
    for (x, y) in [(&a.train, &b.train), (&a.dev, &b.dev), (&a.test, &b.test)] {
        ensure(x.to_json() == y.to_json(), || "corpora differ".into())?;
    }
    let cfg = TrainConfig {
        max_epochs: 3,
        slot_value_dropout: 0.3,
        sharing: SharingMode::SlotSpecific,
        seed: 5,
        ..TrainConfig::default()
    };
    let (m1, m2) = (train(&a.train, &a.dev, &cfg).map_err(|e| e.to_string())?, train(&b.train, &b.dev, &cfg).map_err(|e| e.to_string())?);
    ensure(m1.model.to_bytes().unwrap() == m2.model.to_bytes().unwrap(), || "trained parameters differ".into())?;
    let (r1, r2) = (evaluate(&m1.model, &a.test).map_err(|e| e.to_string())?, evaluate(&m2.model, &b.test).map_err(|e| e.to_string())?);
    ensure(r1.to_json() == r2.to_json(), || "reports differ".into())?;

    let (d1, d2) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (f1, f2) = (cli_run(d1.path())?, cli_run(d2.path())?);
    for ((name, x), (_, y)) in f1.iter().zip(&f2) {
        ensure(x == y, || format!("CLI runs differ in {name}"))?;
    }
    Ok(format!("in-process corpora, parameters and reports identical; {} CLI artifacts identical across processes", f1.len()))
}

// Criterion 9

fn criterion_9() -> Check {
    let splits = generate_synthetic(&GeneratorProfile::sim_m_like(31).with_sizes(30, 5, 10)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, corpus) in [&splits.train, &splits.dev, &splits.test].into_iter().enumerate() {
        let path = dir.path().join(format!("c{i}.json"));
        corpus.save(&path).map_err(|e| e.to_string())?;
        let back = Corpus::load(&path).map_err(|e| e.to_string())?;
        ensure(&back == corpus && back.to_json() == corpus.to_json(), || format!("corpus {i} changed on reload"))?;
    }
    let mut checked = 0;
    for sharing in [SharingMode::Shared, SharingMode::SlotSpecific] {
        let cfg = TrainConfig {
            max_epochs: 3,
            sharing,
            decode_mode: DecodeMode::Joint,
            ..TrainConfig::default()
        };
        let model = train(&splits.train, &splits.dev, &cfg).map_err(|e| e.to_string())?.model;
        let path = dir.path().join("m.bdst");
        model.save(&path).map_err(|e| e.to_string())?;
        let back = ModelBundle::load(&path).map_err(|e| e.to_string())?;
        ensure(back.to_bytes().unwrap() == std::fs::read(&path).unwrap(), || "model bytes changed".into())?;
        for ((n1, t1), (n2, t2)) in model.params().iter().zip(back.params().iter()) {
            let same = n1 == n2 && t1.shape() == t2.shape() && t1.values().iter().zip(t2.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("parameter {n1} changed"))?;
        }
        ensure(back.vocab() == model.vocab() && back.options() == model.options() && back.slots() == model.slots(), || {
            "model metadata changed".into()
        })?;
        for d in &splits.test.dialogues {
            let turns = d.turn_pairs();
            let (p1, p2) = (track_dialogue(&model, &turns).map_err(|e| e.to_string())?, track_dialogue(&back, &turns).map_err(|e| e.to_string())?);
            ensure(p1 == p2, || format!("{sharing:?}: predictions differ on {}", d.id))?;
            for (s, u) in &turns {
                let (a, b) = (model.predict_turn(s, u).unwrap(), back.predict_turn(s, u).unwrap());
                ensure(a == b, || format!("{sharing:?}: turn predictions differ on {}", d.id))?;
                checked += 1;
            }
        }
    }
    Ok(format!("corpora and PS/SS models reload bit-identically; {checked} turn predictions identical"))
}

fn main() {
    let mut evaluated = Evaluated::default();
    let criteria: Vec<Criterion> = vec![
        ("gradient integrity", Box::new(|_| criterion_1())),
        ("overfitting sanity", Box::new(criterion_2)),
        ("generalization and OOV direction", Box::new(criterion_3)),
        ("parameter-sharing arithmetic", Box::new(|_| criterion_4())),
        ("update-mechanism oracle", Box::new(|_| criterion_5())),
        ("decode legality", Box::new(|_| criterion_6())),
        ("metric oracle", Box::new(|e| criterion_7(e))),
        ("determinism", Box::new(|_| criterion_8())),
        ("round-trips", Box::new(|_| criterion_9())),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut evaluated)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())));
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
