//! Small generated corpora with known structure, for sanity checks and
//! property tests.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Label, LabeledExample};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;

const FILLERS: [&str; 12] = [
    "the", "this", "many", "often", "people", "really", "because", "should", "some", "very",
    "about", "still",
];

const MARKERS: [[&str; 3]; 3] = [
    ["benefit", "improves", "helps"],
    ["harms", "damages", "hurts"],
    ["weather", "table", "music"],
];

const SEPARABLE_TOPICS: [&str; 2] = ["solar power", "school uniforms"];

/// Three-class corpus whose label is decided by a single marker word hidden
/// among fillers. Labels cycle for balance.
pub fn separable_corpus(n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let len = rng.gen_range(3..=6);
            let mut words: Vec<&str> = (0..len)
                .map(|_| *FILLERS.choose(&mut rng).expect("nonempty"))
                .collect();
            let marker = MARKERS[label.index()].choose(&mut rng).expect("nonempty");
            words.insert(rng.gen_range(0..=len), marker);
            let topic = SEPARABLE_TOPICS[rng.gen_range(0..SEPARABLE_TOPICS.len())];
            LabeledExample::new(i, topic, &words.join(" "), label)
        })
        .collect()
}

pub const MATCH_TOPICS: [(&str, [&str; 5]); 4] = [
    ("solar power", ["sun", "panel", "roof", "grid", "watt"]),
    (
        "school uniforms",
        ["pupil", "blazer", "dress", "class", "teacher"],
    ),
    (
        "gun control",
        ["rifle", "trigger", "holster", "ammo", "shooter"],
    ),
    (
        "minimum wage",
        ["salary", "worker", "employer", "paycheck", "hourly"],
    ),
];

/// Topic-dependent corpus: every sentence talks about one topic's content
/// words. Half the examples pair it with that topic (an argument, pro or
/// contra), half with a different topic (a non-argument). The sentence alone
/// carries no label information.
pub fn topic_match_corpus(n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let source = rng.gen_range(0..MATCH_TOPICS.len());
            let (_, content) = MATCH_TOPICS[source];
            let mut words: Vec<&str> = content.choose_multiple(&mut rng, 3).copied().collect();
            words.extend(FILLERS.choose_multiple(&mut rng, 2));
            words.shuffle(&mut rng);
            let (topic, label) = if i % 2 == 0 {
                let label = if rng.gen_bool(0.5) {
                    Label::ArgumentFor
                } else {
                    Label::ArgumentAgainst
                };
                (source, label)
            } else {
                let other = (source + rng.gen_range(1..MATCH_TOPICS.len())) % MATCH_TOPICS.len();
                (other, Label::NoArgument)
            };
            LabeledExample::new(i, MATCH_TOPICS[topic].0, &words.join(" "), label)
        })
        .collect()
}

/// Sorted distinct topic and sentence tokens.
pub fn corpus_words(examples: &[LabeledExample]) -> Vec<String> {
    let set: BTreeSet<&str> = examples
        .iter()
        .flat_map(|e| e.topic.tokens().iter().chain(e.sentence.tokens()))
        .map(String::as_str)
        .collect();
    set.into_iter().map(str::to_string).collect()
}

/// Independent standard-normal vectors, one per word.
pub fn random_embeddings<S: AsRef<str>>(
    words: &[S],
    dimension: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingTable::from_entries(words.iter().map(|w| {
        let v: Vec<f64> = (0..dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        (w.as_ref().to_string(), v)
    }))
}
