//! Templated sentence pairs with graded overlap and heuristic labels.
//!
//! Event sentences fill four slots (subject, verb, object, place) from
//! small synonym groups. A pair's label follows how many slot concepts the
//! two sentences share:
//!
//! | relation                       | label            |
//! |--------------------------------|------------------|
//! | identical text                 | 1.0              |
//! | same concepts, other wording   | 0.8              |
//! | `k` of 4 concepts shared       | 0.3 + 0.1·k      |
//! | nothing shared                 | 0.1 same layout, else 0.0 |
//! | sentence vs its negation       | 0.6              |
//!
//! Predicate sentences (`this {noun} is {adjective}.`) use the adjective
//! triplets: anchor vs synonym 0.8, anchor vs opposite 0.4, sentence vs its
//! negation 0.6.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PairDataset, PairRecord};
use crate::seed::derive_seed;

/// (anchor, synonym, opposite) adjective triplets.
pub const ADJECTIVE_TRIPLETS: [(&str, &str, &str); 23] = [
    ("beautiful", "pretty", "ugly"),
    ("ugly", "hideous", "beautiful"),
    ("small", "little", "big"),
    ("big", "huge", "small"),
    ("gigantic", "enormous", "tiny"),
    ("tiny", "minuscule", "enormous"),
    ("old", "elderly", "young"),
    ("young", "youthful", "old"),
    ("difficult", "hard", "easy"),
    ("simple", "easy", "difficult"),
    ("thorough", "comprehensive", "erroneous"),
    ("faulty", "erroneous", "thorough"),
    ("dirty", "messy", "clean"),
    ("clean", "tidy", "dirty"),
    ("heavy", "massive", "light"),
    ("common", "normal", "unusual"),
    ("untypical", "unusual", "normal"),
    ("boring", "dull", "interesting"),
    ("exciting", "interesting", "boring"),
    ("calm", "peaceful", "hectic"),
    ("chaotic", "hectic", "calm"),
    ("balanced", "equal", "uneven"),
    ("unequal", "uneven", "balanced"),
];

/// Noun used by the adjective probe; never the subject of a predicate
/// sentence in the corpus.
pub const PROBE_NOUN: &str = "house";

const PREDICATE_NOUNS: [&str; 8] = [
    "room", "car", "city", "film", "book", "street", "garden", "plan",
];

const SUBJECTS: [&[&str]; 7] = [
    &["man", "guy"],
    &["woman", "lady"],
    &["child", "kid"],
    &["dog", "puppy"],
    &["cat", "kitten"],
    &["teacher", "instructor"],
    &["doctor", "physician"],
];

/// Third-person and base forms.
const VERBS: [&[(&str, &str)]; 8] = [
    &[("eats", "eat"), ("consumes", "consume")],
    &[("reads", "read"), ("studies", "study")],
    &[("throws", "throw"), ("tosses", "toss")],
    &[("carries", "carry"), ("holds", "hold")],
    &[("watches", "watch"), ("views", "view")],
    &[("buys", "buy"), ("purchases", "purchase")],
    &[("cleans", "clean"), ("washes", "wash")],
    &[("paints", "paint"), ("colors", "color")],
];

const OBJECTS: [&[&str]; 8] = [
    &["apple", "fruit"],
    &["book", "novel"],
    &["ball", "toy"],
    &["box", "crate"],
    &["car", "vehicle"],
    &["phone", "mobile"],
    &["bag", "sack"],
    &["picture", "photo"],
];

const PLACES: [&[&str]; 7] = [
    &["park", "garden"],
    &["kitchen", "galley"],
    &["street", "road"],
    &["house", "home"],
    &["beach", "shore"],
    &["office", "workplace"],
    &["school", "classroom"],
];

const SLOT_SIZES: [usize; 4] = [SUBJECTS.len(), VERBS.len(), OBJECTS.len(), PLACES.len()];

/// Concept per slot, wording per slot, layout.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    concepts: [usize; 4],
    wording: [usize; 4],
    layout: usize,
}

impl Event {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut concepts = [0; 4];
        for (c, n) in concepts.iter_mut().zip(SLOT_SIZES) {
            *c = rng.random_range(0..n);
        }
        Self::with_concepts(concepts, rng)
    }

    fn with_concepts(concepts: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let mut wording = [0; 4];
        for w in &mut wording {
            *w = rng.random_range(0..2);
        }
        Self {
            concepts,
            wording,
            layout: rng.random_range(0..2),
        }
    }

    fn words(
        &self,
    ) -> (
        &'static str,
        (&'static str, &'static str),
        &'static str,
        &'static str,
    ) {
        let [s, v, o, p] = self.concepts;
        let [ws, wv, wo, wp] = self.wording;
        (SUBJECTS[s][ws], VERBS[v][wv], OBJECTS[o][wo], PLACES[p][wp])
    }

    fn text(&self) -> String {
        let (s, (v, _), o, p) = self.words();
        match self.layout {
            0 => format!("the {s} {v} the {o} in the {p}."),
            _ => format!("in the {p}, the {s} {v} the {o}."),
        }
    }

    fn negated(&self) -> String {
        let (s, (_, v), o, p) = self.words();
        match self.layout {
            0 => format!("the {s} does not {v} the {o} in the {p}."),
            _ => format!("in the {p}, the {s} does not {v} the {o}."),
        }
    }
}

fn predicate(noun: &str, adjective: &str) -> String {
    format!("this {noun} is {adjective}.")
}

fn negated_predicate(noun: &str, adjective: &str) -> String {
    format!("this {noun} is not {adjective}.")
}

fn other_concept(rng: &mut ChaCha8Rng, slot: usize, current: usize) -> usize {
    let n = SLOT_SIZES[slot];
    (current + rng.random_range(1..n)) % n
}

fn event_pair(rng: &mut ChaCha8Rng) -> PairRecord {
    let a = Event::random(rng);
    let roll: f64 = rng.random();
    if roll < 0.10 {
        return PairRecord::new(a.text(), a.text(), 1.0);
    }
    if roll < 0.32 {
        let mut b = Event::with_concepts(a.concepts, rng);
        while b.text() == a.text() {
            b = Event::with_concepts(a.concepts, rng);
        }
        return PairRecord::new(a.text(), b.text(), 0.8);
    }
    if roll < 0.82 {
        let k = rng.random_range(0..4usize);
        let mut slots = [0, 1, 2, 3];
        for i in (1..4).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let mut concepts = a.concepts;
        for &slot in &slots[k..] {
            concepts[slot] = other_concept(rng, slot, a.concepts[slot]);
        }
        let b = Event::with_concepts(concepts, rng);
        let label = if k == 0 {
            if a.layout == b.layout {
                0.1
            } else {
                0.0
            }
        } else {
            0.3 + 0.1 * k as f64
        };
        return PairRecord::new(a.text(), b.text(), label);
    }
    PairRecord::new(a.text(), a.negated(), 0.6)
}

fn predicate_pair(rng: &mut ChaCha8Rng) -> PairRecord {
    let noun = PREDICATE_NOUNS.choose(rng).expect("nouns");
    let (anchor, synonym, opposite) = *ADJECTIVE_TRIPLETS.choose(rng).expect("triplets");
    let a = predicate(noun, anchor);
    match rng.random_range(0..3) {
        0 => PairRecord::new(a, predicate(noun, synonym), 0.8),
        1 => PairRecord::new(a, predicate(noun, opposite), 0.4),
        _ => PairRecord::new(a, negated_predicate(noun, anchor), 0.6),
    }
}

/// Unique labelled pairs (at most `size`; the template space may run out),
/// split 80/10/10.
pub fn generate_synthetic_corpus(seed: u64, size: usize) -> PairDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "corpus"));
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(size);
    // Every triplet with three nouns first, so each adjective occurs several
    // times and almost surely lands in the training split.
    let mut coverage = Vec::new();
    for round in 0..3 {
        for (i, &(anchor, synonym, opposite)) in ADJECTIVE_TRIPLETS.iter().enumerate() {
            let noun = PREDICATE_NOUNS[(i + 3 * round) % PREDICATE_NOUNS.len()];
            coverage.push(PairRecord::new(
                predicate(noun, anchor),
                predicate(noun, synonym),
                0.8,
            ));
            coverage.push(PairRecord::new(
                predicate(noun, anchor),
                predicate(noun, opposite),
                0.4,
            ));
        }
    }
    coverage.truncate(size / 5);
    let mut pending = coverage.into_iter();
    let mut attempts = 0;
    while records.len() < size && attempts < size * 100 {
        attempts += 1;
        let rec = if let Some(rec) = pending.next() {
            rec
        } else if rng.random::<f64>() < 0.85 {
            event_pair(&mut rng)
        } else {
            predicate_pair(&mut rng)
        };
        let key = if rec.a <= rec.b {
            (rec.a.clone(), rec.b.clone())
        } else {
            (rec.b.clone(), rec.a.clone())
        };
        if seen.insert(key) {
            records.push(rec);
        }
    }
    PairDataset::split(records, derive_seed(seed, "corpus-split"))
        .expect("generated labels lie in [0, 1] and pairs are unique")
}

/// Sentences with exactly one `not`, for the negation probe.
pub fn negation_sentences(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "negation"));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < count * 100 {
        attempts += 1;
        let text = if rng.random::<f64>() < 0.7 {
            Event::random(&mut rng).negated()
        } else {
            let noun = PREDICATE_NOUNS.choose(&mut rng).expect("nouns");
            let (anchor, ..) = ADJECTIVE_TRIPLETS.choose(&mut rng).expect("triplets");
            negated_predicate(noun, anchor)
        };
        if seen.insert(text.clone()) {
            out.push(text);
        }
    }
    out
}

/// Anchor–synonym and anchor–opposite sentence pairs for every triplet.
pub fn adjective_pairs(
    triplets: &[(String, String, String)],
    noun: &str,
) -> Vec<(PairRecord, PairRecord)> {
    triplets
        .iter()
        .map(|(anchor, synonym, opposite)| {
            (
                PairRecord::new(predicate(noun, anchor), predicate(noun, synonym), 0.8),
                PairRecord::new(predicate(noun, anchor), predicate(noun, opposite), 0.4),
            )
        })
        .collect()
}

pub fn default_triplets() -> Vec<(String, String, String)> {
    ADJECTIVE_TRIPLETS
        .iter()
        .map(|&(a, s, o)| (a.to_string(), s.to_string(), o.to_string()))
        .collect()
}
