use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, LabeledExample, Topic};
use crate::error::{Error, Result};

pub const TERMS_PER_TOPIC: usize = 5;

const BUILTIN: [(&str, [&str; TERMS_PER_TOPIC]); 8] = [
    (
        "abortion",
        [
            "euthanasia",
            "teenage pregnancy",
            "family",
            "medical procedure",
            "rape",
        ],
    ),
    (
        "cloning",
        [
            "biology",
            "species",
            "religion",
            "organ donation",
            "modified food",
        ],
    ),
    (
        "death penalty",
        ["politics", "ethic", "prison", "homicide", "sentence"],
    ),
    (
        "gun control",
        [
            "safety",
            "school shooting",
            "robbery",
            "regulation",
            "police state",
        ],
    ),
    (
        "marijuana legalization",
        ["drugs", "medicine", "relaxation", "freedom", "liberty"],
    ),
    (
        "minimum wage",
        [
            "social justice",
            "slavery",
            "automation",
            "economic crisis",
            "stagnation",
        ],
    ),
    (
        "nuclear energy",
        [
            "environment",
            "employment",
            "industry",
            "pollution",
            "climate change",
        ],
    ),
    (
        "school uniforms",
        [
            "equality",
            "social justice",
            "individualism",
            "clothing",
            "mobbing",
        ],
    ),
];

fn key(topic: &str) -> String {
    topic.trim().to_lowercase()
}

/// Topic → five distractor terms that are related to, but not the same as,
/// the topic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelatedTermsRegistry {
    terms: BTreeMap<String, Vec<String>>,
}

impl RelatedTermsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The eight controversial topics of the standard argument corpus.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        for (topic, terms) in BUILTIN {
            r.insert(topic, terms.iter().map(|t| t.to_string()).collect())
                .expect("builtin registry is well-formed");
        }
        r
    }

    pub fn insert(&mut self, topic: &str, terms: Vec<String>) -> Result<()> {
        let k = key(topic);
        if k.is_empty() {
            return Err(Error::invalid("registry topic is empty"));
        }
        if terms.len() != TERMS_PER_TOPIC {
            return Err(Error::invalid(format!(
                "topic `{topic}` needs exactly {TERMS_PER_TOPIC} related terms, got {}",
                terms.len()
            )));
        }
        if let Some(t) = terms.iter().find(|t| key(t) == k || t.trim().is_empty()) {
            return Err(Error::invalid(format!(
                "invalid related term `{t}` for topic `{topic}`"
            )));
        }
        self.terms.insert(k, terms);
        Ok(())
    }

    pub fn get(&self, topic: &str) -> Option<&[String]> {
        self.terms.get(&key(topic)).map(Vec::as_slice)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Reads `topic<TAB>term1<TAB>…<TAB>term5` lines; blank lines and lines
    /// starting with `#` are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut r = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let topic = fields.next().unwrap_or_default();
            let terms = fields.map(|t| t.trim().to_string()).collect();
            r.insert(topic, terms).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        if r.is_empty() {
            return Err(Error::Empty("related-terms registry"));
        }
        Ok(r)
    }
}

pub fn related_terms_registry() -> RelatedTermsRegistry {
    RelatedTermsRegistry::builtin()
}

/// `round(fraction × arguments)`, halves rounded up.
pub fn relabel_count(arguments: usize, fraction: f64) -> usize {
    (fraction * arguments as f64 + 0.5).floor() as usize
}

/// Picks the argumentative examples to relabel (positions into `examples`,
/// ascending) and a related-term topic for each.
fn plan(
    examples: &[LabeledExample],
    registry: &RelatedTermsRegistry,
    fraction: f64,
    seed: u64,
) -> Result<Vec<(usize, Topic)>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "fraction {fraction} is outside [0, 1]"
        )));
    }
    for e in examples {
        if registry.get(e.topic.raw()).is_none() {
            return Err(Error::UnregisteredTopic {
                topic: e.topic.raw().to_string(),
            });
        }
    }
    let mut args: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].label.is_argument())
        .collect();
    let n = relabel_count(args.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    args.shuffle(&mut rng);
    let mut chosen = args[..n].to_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|i| {
            let terms = registry
                .get(examples[i].topic.raw())
                .expect("checked above");
            let term = &terms[rng.gen_range(0..terms.len())];
            Ok((i, Topic::new(term.as_str())?))
        })
        .collect()
}

/// Relabels a seeded selection of argumentative examples in place: each gets
/// a related term of its topic as the new topic and the NoArgument label.
pub fn augment_test(
    examples: &[LabeledExample],
    registry: &RelatedTermsRegistry,
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let mut out = examples.to_vec();
    for (i, topic) in plan(examples, registry, fraction, seed)? {
        out[i].topic = topic;
        out[i].label = Label::NoArgument;
    }
    Ok(out)
}

/// Keeps every original and appends relabelled copies of a seeded selection
/// of argumentative examples; copies get fresh indices after the largest one.
pub fn augment_train(
    examples: &[LabeledExample],
    registry: &RelatedTermsRegistry,
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let first = examples.iter().map(|e| e.index + 1).max().unwrap_or(0);
    let mut out = examples.to_vec();
    for ((i, topic), index) in plan(examples, registry, fraction, seed)?
        .into_iter()
        .zip(first..)
    {
        let mut copy = examples[i].clone();
        copy.topic = topic;
        copy.label = Label::NoArgument;
        copy.index = index;
        out.push(copy);
    }
    Ok(out)
}
