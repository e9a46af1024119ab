//! Seeded synthetic dialogues with a held-out value lexicon for one slot.
//!
//! Dialogues follow a booking flow: the user opens by mentioning a few
//! slots, then the system either asks for a missing slot or offers a value
//! which the user accepts or overrides. Every value label carries exact
//! character offsets, and gold states are the fold of the labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fold_labels, Corpus, Dialogue, Label, Schema, Turn};
use crate::numeric::rng::{stream, DetRng};
use crate::tokenizer::{CharSpan, Source};
use crate::tracker::DialogueState;

const VALUE: &str = "{v}";
const LEXICON_STREAM: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("unknown profile {0:?} (expected sim-m-like or sim-r-like)")]
    UnknownProfile(String),
    #[error("slot {slot}: template {template:?} must contain {VALUE} exactly once")]
    Template { slot: String, template: String },
    #[error("slot {0}: empty value lexicon")]
    EmptyLexicon(String),
    #[error("slot {slot}: held-out value {value:?} is also a training value")]
    Overlap { slot: String, value: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    /// Values used in every split.
    pub values: Vec<String>,
    /// Held-out values; when non-empty the slot is out-of-vocabulary in dev
    /// (first half) and test (second half) and `values` is used only in train.
    pub oov_values: Vec<String>,
    /// User phrases mentioning a value.
    pub mentions: Vec<String>,
    /// System questions asking for the slot.
    pub requests: Vec<String>,
    /// User replies meaning any value is acceptable; empty disables dontcare.
    pub dontcare: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorProfile {
    pub name: String,
    pub slots: Vec<SlotSpec>,
    pub openers: Vec<String>,
    pub offers: Vec<String>,
    pub accepts: Vec<String>,
    pub rejects: Vec<String>,
    pub closings: Vec<(String, String)>,
    pub min_opening_slots: usize,
    pub max_opening_slots: usize,
    pub dontcare_rate: f64,
    pub offer_rate: f64,
    pub reject_rate: f64,
    pub skip_rate: f64,
    pub closing_rate: f64,
    pub seed: u64,
    pub train_dialogues: usize,
    pub dev_dialogues: usize,
    pub test_dialogues: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn slot(name: &str, values: &[&str], mentions: &[&str], requests: &[&str], dontcare: &[&str]) -> SlotSpec {
    SlotSpec {
        name: name.into(),
        values: strings(values),
        oov_values: Vec::new(),
        mentions: strings(mentions),
        requests: strings(requests),
        dontcare: strings(dontcare),
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "ro", "vi", "den", "lu", "mar", "sel", "to", "qua", "zen", "fi", "bor", "nal", "ke", "dra", "mo", "vel",
    "tis", "gar", "un", "pho", "lin", "sar", "tek", "ju", "ven", "hol", "mi", "zor", "ash", "pre", "wyn", "cor", "bel",
    "tha", "rix", "ol", "nu", "gra", "ves",
];

/// `count` distinct pseudo-words of 2-3 syllables, none in `reserved`.
fn pseudo_words(rng: &mut DetRng, count: usize, reserved: &BTreeSet<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.random_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if !reserved.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Multi-word names from a pool of pseudo-words; the train and held-out
/// lists draw from disjoint halves of the pool.
fn name_lexicons(seed: u64, train: usize, held_out: usize, prefixes: &[&str], reserved: &BTreeSet<String>) -> (Vec<String>, Vec<String>) {
    let mut rng = stream(seed, LEXICON_STREAM, 0);
    let pool = pseudo_words(&mut rng, 2 * (train + held_out), reserved);
    let (train_words, held_words) = pool.split_at(2 * train);
    let build = |words: &[String], count: usize, rng: &mut DetRng| {
        let mut names = BTreeSet::new();
        let mut out = Vec::with_capacity(count);
        let mut i = 0;
        while out.len() < count {
            let w = &words[i % words.len()];
            let name = match rng.random_range(0..4) {
                0 => format!("{} {w}", prefixes.choose(rng).expect("non-empty")),
                1 => format!("{w} {}", words[(i + 1) % words.len()]),
                _ => w.clone(),
            };
            if names.insert(name.clone()) {
                out.push(name);
            }
            i += 1;
        }
        out
    };
    let t = build(train_words, train, &mut rng);
    let h = build(held_words, held_out, &mut rng);
    (t, h)
}

fn date_slot() -> SlotSpec {
    slot(
        "date",
        &[
            "today", "tonight", "tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday",
            "sunday", "next monday", "next friday", "this weekend", "next saturday",
        ],
        &["{v}", "for {v}"],
        &["which day would you like ?", "what date works for you ?", "for which day ?"],
        &["any day is fine", "i don't mind which day", "the date does not matter"],
    )
}

fn time_slot(mentions: &[&str], requests: &[&str]) -> SlotSpec {
    slot(
        "time",
        &[
            "10 am", "11:30 am", "noon", "1 pm", "2:15 pm", "4 pm", "5:30 pm", "6 pm", "6:45 pm", "7 pm", "7:30 pm",
            "8 pm", "9 pm", "9:45 pm", "10:30 pm",
        ],
        mentions,
        requests,
        &["any time works", "the time does not matter", "i am flexible on time"],
    )
}

impl GeneratorProfile {
    pub fn named(name: &str, seed: u64) -> Result<Self, GeneratorError> {
        match name {
            "sim-m-like" => Ok(Self::sim_m_like(seed)),
            "sim-r-like" => Ok(Self::sim_r_like(seed)),
            other => Err(GeneratorError::UnknownProfile(other.to_string())),
        }
    }

    /// Movie tickets: date, time, num_tickets, theatre_name, movie (held out).
    pub fn sim_m_like(seed: u64) -> Self {
        let mut slots = vec![
            date_slot(),
            time_slot(
                &["at {v}", "around {v}", "the {v} show"],
                &["what time would you like ?", "which showtime do you prefer ?", "at what time ?"],
            ),
            slot(
                "num_tickets",
                &["1", "2", "3", "4", "5", "6", "one", "two", "three", "four", "five", "six"],
                &["{v} tickets", "{v} seats", "for {v} people"],
                &["how many tickets ?", "how many people are going ?", "how many seats do you need ?"],
                &[],
            ),
            slot(
                "theatre_name",
                &[
                    "regal 16", "amc mercado", "cinemark", "century 20", "landmark", "alamo drafthouse", "the castro",
                    "roxie", "aero theatre", "camera 7",
                ],
                &["at {v}", "at the {v}", "in {v}"],
                &["which theatre ?", "which cinema would you like ?", "where would you like to watch it ?"],
                &["any theatre is fine", "i don't care which cinema"],
            ),
            slot(
                "movie",
                &[],
                &["to see {v}", "to watch {v}", "tickets for {v}", "the movie {v}"],
                &["which movie would you like to see ?", "what film are you interested in ?", "which movie ?"],
                &["any movie is fine"],
            ),
        ];
        let mut profile = Self {
            name: "sim-m-like".into(),
            slots: Vec::new(),
            openers: strings(&[
                "i want to buy movie tickets",
                "hi , i would like to book tickets",
                "can you get me tickets",
                "book movie tickets",
                "",
            ]),
            offers: strings(&["how about {v} ?", "would {v} work ?", "i have {v} , is that ok ?"]),
            accepts: strings(&["yes", "sure , that works", "sounds good", "ok"]),
            rejects: strings(&["no , {v}", "no , i prefer {v}"]),
            closings: vec![
                ("your tickets are booked .".into(), "thanks , bye".into()),
                ("is there anything else ?".into(), "no , thank you".into()),
            ],
            min_opening_slots: 1,
            max_opening_slots: 3,
            dontcare_rate: 0.1,
            offer_rate: 0.25,
            reject_rate: 0.3,
            skip_rate: 0.1,
            closing_rate: 0.5,
            seed,
            train_dialogues: 400,
            dev_dialogues: 100,
            test_dialogues: 200,
        };
        let reserved = profile.reserved_words(&slots);
        let (train, held) = name_lexicons(seed, 60, 40, &["the", "return of", "night of"], &reserved);
        slots[4].values = train;
        slots[4].oov_values = held;
        profile.slots = slots;
        profile
    }

    /// Restaurant reservations with nine slots; restaurant_name is held out.
    pub fn sim_r_like(seed: u64) -> Self {
        let mut slots = vec![
            date_slot(),
            time_slot(
                &["at {v}", "around {v}", "for {v}"],
                &["what time would you like ?", "at what time ?", "when should i book it ?"],
            ),
            slot(
                "category",
                &[
                    "italian", "chinese", "thai", "mexican", "indian", "french", "japanese", "greek", "korean",
                    "vietnamese", "spanish", "american",
                ],
                &["{v} food", "a {v} restaurant", "some {v}"],
                &["what kind of food would you like ?", "which cuisine ?"],
                &["any cuisine is fine", "i don't care what food"],
            ),
            slot(
                "price_range",
                &["cheap", "moderately priced", "expensive", "inexpensive", "upscale"],
                &["something {v}", "a {v} place"],
                &["what price range ?", "how much would you like to spend ?"],
                &["price does not matter", "any price is fine"],
            ),
            slot(
                "rating",
                &["3 stars", "4 stars", "5 stars", "4.5 stars"],
                &["rated {v}", "with {v}", "at least {v}"],
                &["what rating would you like ?", "any rating preference ?"],
                &["any rating is fine"],
            ),
            slot(
                "num_people",
                &["1", "2", "3", "4", "5", "6", "7", "8", "two", "three", "four", "six"],
                &["for {v} people", "a table for {v}", "party of {v}"],
                &["how many people ?", "for how many guests ?"],
                &[],
            ),
            slot(
                "location",
                &[
                    "mountain view", "palo alto", "sunnyvale", "san jose", "cupertino", "los altos", "menlo park",
                    "redwood city", "santa clara", "campbell",
                ],
                &["in {v}", "near {v}", "around {v}"],
                &["which area ?", "where should the restaurant be ?"],
                &["anywhere is fine", "location does not matter"],
            ),
            slot(
                "meal",
                &["breakfast", "brunch", "lunch", "dinner"],
                &["for {v}", "{v}"],
                &["which meal is this for ?", "breakfast , lunch or dinner ?"],
                &["any meal is fine"],
            ),
            slot(
                "restaurant_name",
                &[],
                &["at {v}", "a table at {v}", "reserve {v}"],
                &["which restaurant would you like ?", "do you have a restaurant in mind ?"],
                &["any restaurant is fine"],
            ),
        ];
        let mut profile = Self {
            name: "sim-r-like".into(),
            slots: Vec::new(),
            openers: strings(&[
                "i want to book a restaurant",
                "hi , can you find me a table",
                "i need a reservation",
                "book a table",
                "",
            ]),
            offers: strings(&["how about {v} ?", "would {v} work ?", "i found {v} , is that ok ?"]),
            accepts: strings(&["yes", "sure , that works", "sounds good", "ok"]),
            rejects: strings(&["no , {v}", "no , i prefer {v}"]),
            closings: vec![
                ("your table is reserved .".into(), "thanks , bye".into()),
                ("is there anything else ?".into(), "no , thank you".into()),
            ],
            min_opening_slots: 1,
            max_opening_slots: 4,
            dontcare_rate: 0.1,
            offer_rate: 0.25,
            reject_rate: 0.3,
            skip_rate: 0.15,
            closing_rate: 0.5,
            seed,
            train_dialogues: 400,
            dev_dialogues: 100,
            test_dialogues: 200,
        };
        let reserved = profile.reserved_words(&slots);
        let (train, held) = name_lexicons(seed, 60, 40, &["cafe", "the", "chez"], &reserved);
        slots[8].values = train;
        slots[8].oov_values = held;
        profile.slots = slots;
        profile
    }

    pub fn with_sizes(mut self, train: usize, dev: usize, test: usize) -> Self {
        self.train_dialogues = train;
        self.dev_dialogues = dev;
        self.test_dialogues = test;
        self
    }

    fn reserved_words(&self, slots: &[SlotSpec]) -> BTreeSet<String> {
        let texts = slots
            .iter()
            .flat_map(|s| s.values.iter().chain(&s.mentions).chain(&s.requests).chain(&s.dontcare))
            .chain(self.openers.iter().chain(&self.offers).chain(&self.accepts).chain(&self.rejects))
            .chain(self.closings.iter().flat_map(|(a, b)| [a, b]));
        texts.flat_map(|t| t.split_whitespace().map(str::to_lowercase)).collect()
    }

    /// Names of the held-out slots.
    pub fn oov_slots(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|s| !s.oov_values.is_empty())
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let one_value = |slot: &str, t: &str| {
            if t.matches(VALUE).count() == 1 {
                Ok(())
            } else {
                Err(GeneratorError::Template {
                    slot: slot.to_string(),
                    template: t.to_string(),
                })
            }
        };
        if self.slots.is_empty() {
            return Err(GeneratorError::Invalid("no slots".into()));
        }
        for t in self.offers.iter().chain(&self.rejects) {
            one_value("*", t)?;
        }
        for s in &self.slots {
            if s.values.is_empty() {
                return Err(GeneratorError::EmptyLexicon(s.name.clone()));
            }
            if s.mentions.is_empty() || s.requests.is_empty() {
                return Err(GeneratorError::Invalid(format!("slot {} needs mentions and requests", s.name)));
            }
            for m in &s.mentions {
                one_value(&s.name, m)?;
            }
            if s.oov_values.len() == 1 {
                return Err(GeneratorError::Invalid(format!("slot {} needs at least two held-out values", s.name)));
            }
            let train: BTreeSet<String> = s.values.iter().map(|v| v.to_lowercase()).collect();
            if let Some(v) = s.oov_values.iter().find(|v| train.contains(&v.to_lowercase())) {
                return Err(GeneratorError::Overlap {
                    slot: s.name.clone(),
                    value: v.clone(),
                });
            }
        }
        let rates = [
            self.dontcare_rate,
            self.offer_rate,
            self.reject_rate,
            self.skip_rate,
            self.closing_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(GeneratorError::Invalid("rates must be in [0, 1]".into()));
        }
        if self.min_opening_slots == 0 || self.min_opening_slots > self.max_opening_slots {
            return Err(GeneratorError::Invalid("opening slot range must satisfy 1 <= min <= max".into()));
        }
        if self.openers.is_empty() || self.accepts.is_empty() || self.offers.is_empty() {
            return Err(GeneratorError::Invalid("openers, offers and accepts must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Dev,
    Test,
}

/// Text under construction with value offsets.
struct Utterance {
    text: String,
    chars: usize,
}

impl Utterance {
    fn new() -> Self {
        Self {
            text: String::new(),
            chars: 0,
        }
    }

    fn push(&mut self, s: &str) {
        if s.is_empty() {
            return;
        }
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    /// Appends `template` with `{v}` replaced by `value`; returns the value's
    /// character range.
    fn push_template(&mut self, template: &str, value: &str) -> (usize, usize) {
        let (before, after) = template.split_once(VALUE).expect("validated template");
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        self.text.push_str(before);
        self.chars += before.chars().count();
        let start = self.chars;
        self.text.push_str(value);
        self.chars += value.chars().count();
        let end = self.chars;
        self.text.push_str(after);
        self.chars += after.chars().count();
        (start, end)
    }
}

struct DialogueBuilder<'a> {
    profile: &'a GeneratorProfile,
    split: Split,
    rng: DetRng,
}

impl DialogueBuilder<'_> {
    fn pick<'v>(&mut self, items: &'v [String]) -> &'v str {
        items.choose(&mut self.rng).expect("validated non-empty")
    }

    fn value(&mut self, slot: &SlotSpec) -> String {
        let lexicon: &[String] = if slot.oov_values.is_empty() || self.split == Split::Train {
            &slot.values
        } else {
            let half = slot.oov_values.len() / 2;
            match self.split {
                Split::Dev => &slot.oov_values[..half],
                _ => &slot.oov_values[half..],
            }
        };
        self.pick(lexicon).to_string()
    }

    fn build(mut self, id: String) -> Dialogue {
        let p = self.profile;
        let mut order: Vec<usize> = (0..p.slots.len()).collect();
        order.shuffle(&mut self.rng);
        let keep = order.len() - order.iter().skip(1).filter(|_| self.rng.random_bool(p.skip_rate)).count();
        order.truncate(keep);
        let opening = self.rng.random_range(p.min_opening_slots..=p.max_opening_slots).min(order.len());

        let mut turns = Vec::new();
        let mut state = DialogueState::new();
        let mut push_turn = |system: Utterance, user: Utterance, labels: BTreeMap<String, Label>| {
            state = fold_labels(&state, &labels);
            turns.push(Turn {
                system: system.text,
                user: user.text,
                labels,
                state: state.clone(),
            });
        };

        let mut user = Utterance::new();
        user.push(self.pick(&p.openers));
        let mut labels = BTreeMap::new();
        for &si in &order[..opening] {
            let s = &p.slots[si];
            let v = self.value(s);
            let m = self.pick(&s.mentions).to_string();
            let (a, b) = user.push_template(&m, &v);
            labels.insert(s.name.clone(), Label::value_at(v, span(Source::User, a, b)));
        }
        push_turn(Utterance::new(), user, labels);

        for &si in &order[opening..] {
            let s = &p.slots[si];
            let mut system = Utterance::new();
            let mut user = Utterance::new();
            let mut labels = BTreeMap::new();
            if self.rng.random_bool(p.offer_rate) {
                let offered = self.value(s);
                let t = self.pick(&p.offers).to_string();
                let (a, b) = system.push_template(&t, &offered);
                if !p.rejects.is_empty() && self.rng.random_bool(p.reject_rate) {
                    let mut v = self.value(s);
                    for _ in 0..8 {
                        if v != offered {
                            break;
                        }
                        v = self.value(s);
                    }
                    let t = self.pick(&p.rejects).to_string();
                    let (a, b) = user.push_template(&t, &v);
                    labels.insert(s.name.clone(), Label::value_at(v, span(Source::User, a, b)));
                } else {
                    user.push(self.pick(&p.accepts));
                    labels.insert(s.name.clone(), Label::value_at(offered, span(Source::System, a, b)));
                }
            } else {
                system.push(self.pick(&s.requests));
                if !s.dontcare.is_empty() && self.rng.random_bool(p.dontcare_rate) {
                    user.push(self.pick(&s.dontcare));
                    labels.insert(s.name.clone(), Label::dontcare());
                } else {
                    let v = self.value(s);
                    let (a, b) = match self.rng.random_range(0..3) {
                        0 => user.push_template(VALUE, &v),
                        1 => user.push_template(&format!("{} please", self.pick(&s.mentions)), &v),
                        _ => {
                            let m = self.pick(&s.mentions).to_string();
                            user.push_template(&m, &v)
                        }
                    };
                    labels.insert(s.name.clone(), Label::value_at(v, span(Source::User, a, b)));
                }
            }
            push_turn(system, user, labels);
        }

        if !p.closings.is_empty() && self.rng.random_bool(p.closing_rate) {
            let (s, u) = p.closings.choose(&mut self.rng).expect("non-empty").clone();
            let (mut system, mut user) = (Utterance::new(), Utterance::new());
            system.push(&s);
            user.push(&u);
            push_turn(system, user, BTreeMap::new());
        }
        Dialogue { id, turns }
    }
}

fn span(source: Source, start: usize, end: usize) -> CharSpan {
    CharSpan { source, start, end }
}

/// Train, dev and test corpora. Identical profiles give identical output.
pub fn generate_synthetic(profile: &GeneratorProfile) -> Result<SyntheticSplits, GeneratorError> {
    profile.validate()?;
    let schema = Schema {
        slots: profile.slots.iter().map(|s| s.name.clone()).collect(),
    };
    let corpus = |split: Split, tag: &str, count: usize| {
        let dialogues = (0..count)
            .map(|i| {
                let builder = DialogueBuilder {
                    profile,
                    split,
                    rng: stream(profile.seed, split as u64 + 1, i as u64),
                };
                builder.build(format!("{}-{tag}-{i:04}", profile.name))
            })
            .collect();
        Corpus {
            schema: schema.clone(),
            dialogues,
        }
    };
    Ok(SyntheticSplits {
        train: corpus(Split::Train, "train", profile.train_dialogues),
        dev: corpus(Split::Dev, "dev", profile.dev_dialogues),
        test: corpus(Split::Test, "test", profile.test_dialogues),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{slot_values, LabelKind};

    fn small(name: &str, seed: u64) -> SyntheticSplits {
        let p = GeneratorProfile::named(name, seed).unwrap().with_sizes(40, 10, 20);
        generate_synthetic(&p).unwrap()
    }

    #[test]
    fn profiles_validate() {
        for name in ["sim-m-like", "sim-r-like"] {
            let p = GeneratorProfile::named(name, 3).unwrap();
            p.validate().unwrap();
            assert_eq!(p.oov_slots().len(), 1);
        }
        assert_eq!(GeneratorProfile::sim_m_like(0).slots.len(), 5);
        assert_eq!(GeneratorProfile::sim_r_like(0).slots.len(), 9);
        assert!(GeneratorProfile::named("dstc", 0).is_err());
    }

    #[test]
    fn bad_templates_are_rejected() {
        let mut p = GeneratorProfile::sim_m_like(0);
        p.slots[0].mentions.push("no placeholder".into());
        assert!(matches!(generate_synthetic(&p), Err(GeneratorError::Template { .. })));
        let mut p = GeneratorProfile::sim_m_like(0);
        let v = p.slots[4].values[0].clone();
        p.slots[4].oov_values.push(v);
        assert!(matches!(p.validate(), Err(GeneratorError::Overlap { .. })));
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = small("sim-m-like", 5);
        let b = small("sim-m-like", 5);
        assert_eq!(a.train.to_json(), b.train.to_json());
        assert_eq!(a.test.to_json(), b.test.to_json());
        assert_ne!(a.train.to_json(), small("sim-m-like", 6).train.to_json());
    }

    #[test]
    fn corpora_validate_and_offsets_are_exact() {
        for name in ["sim-m-like", "sim-r-like"] {
            let s = small(name, 7);
            for c in [&s.train, &s.dev, &s.test] {
                c.validate().unwrap();
                for t in c.dialogues.iter().flat_map(|d| &d.turns) {
                    for l in t.labels.values().filter(|l| l.kind == LabelKind::Value) {
                        let span = l.char_span().expect("generated labels carry offsets");
                        let text: String = t
                            .utterance(span.source)
                            .chars()
                            .skip(span.start)
                            .take(span.end - span.start)
                            .collect();
                        assert_eq!(Some(text.as_str()), l.value.as_deref());
                    }
                }
            }
        }
    }

    #[test]
    fn gold_states_are_label_folds() {
        let s = small("sim-r-like", 8);
        for d in &s.train.dialogues {
            let mut state = BTreeMap::new();
            for t in &d.turns {
                for (slot, l) in &t.labels {
                    match l.kind {
                        LabelKind::Value => {
                            state.insert(slot.clone(), l.value.clone().unwrap());
                        }
                        LabelKind::DontCare => {
                            state.insert(slot.clone(), "dontcare".to_string());
                        }
                        LabelKind::None => {}
                    }
                }
                let stored: BTreeMap<String, String> =
                    t.state.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
                assert_eq!(stored, state);
            }
        }
    }

    #[test]
    fn held_out_values_never_reach_train() {
        for name in ["sim-m-like", "sim-r-like"] {
            let p = GeneratorProfile::named(name, 9).unwrap();
            let oov = &p.oov_slots()[0];
            let s = small(name, 9);
            let train = &slot_values(&s.train)[oov];
            let train_words: BTreeSet<&str> = train.iter().flat_map(|v| v.split_whitespace()).collect();
            let dev = &slot_values(&s.dev)[oov];
            let test = &slot_values(&s.test)[oov];
            assert!(!test.is_empty() && !dev.is_empty());
            assert!(dev.is_disjoint(test));
            for v in test.iter().chain(dev) {
                assert!(!train.contains(v));
                assert!(
                    v.split_whitespace().all(|w| !train_words.contains(w) || ["the", "return", "of", "night", "cafe", "chez"].contains(&w)),
                    "{v}"
                );
            }
        }
    }

    #[test]
    fn dialogues_use_all_label_kinds() {
        let s = small("sim-m-like", 10);
        let mut kinds = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for l in s.train.dialogues.iter().flat_map(|d| &d.turns).flat_map(|t| t.labels.values()) {
            kinds.insert(format!("{:?}", l.kind));
            if let Some(src) = l.source {
                sources.insert(src);
            }
        }
        assert!(kinds.contains("Value") && kinds.contains("DontCare"));
        assert_eq!(sources.len(), 2);
        assert!(s.train.dialogues.iter().all(|d| d.turns[0].system.is_empty()));
    }
}
