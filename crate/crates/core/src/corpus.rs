//! Sentential argument corpora: data model, TSV ingestion, label views and
//! the in-topic / cross-topic split protocols.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentence length limit applied before training and evaluation.
pub const DEFAULT_MAX_WORDS: usize = 60;

/// Lowercases, splits on whitespace and strips punctuation glued to word edges.
///
/// Inner punctuation (`don't`, `e-mail`) is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<String>,
    raw: String,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        if tokens.is_empty() {
            return Err(Error::Empty("sentence has no tokens"));
        }
        Ok(Self { tokens, raw })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the first `max_words` tokens. The raw text is left intact.
    pub fn truncate(&self, max_words: usize) -> Sentence {
        let max_words = max_words.max(1);
        Sentence {
            tokens: self.tokens.iter().take(max_words).cloned().collect(),
            raw: self.raw.clone(),
        }
    }
}

/// Free-function form of [`Sentence::truncate`].
pub fn truncate(sentence: &Sentence, max_words: usize) -> Sentence {
    sentence.truncate(max_words)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topic {
    tokens: Vec<String>,
    raw: String,
}

impl Topic {
    pub fn new(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        if tokens.is_empty() {
            return Err(Error::Empty("topic has no tokens"));
        }
        Ok(Self { tokens, raw })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    ArgumentFor,
    ArgumentAgainst,
    NoArgument,
}

impl Label {
    pub const ALL: [Label; 3] = [
        Label::ArgumentFor,
        Label::ArgumentAgainst,
        Label::NoArgument,
    ];

    /// Annotation string used in corpus files.
    pub fn annotation(self) -> &'static str {
        match self {
            Label::ArgumentFor => "Argument_for",
            Label::ArgumentAgainst => "Argument_against",
            Label::NoArgument => "NoArgument",
        }
    }

    pub fn from_annotation(s: &str) -> Option<Label> {
        match s {
            "Argument_for" => Some(Label::ArgumentFor),
            "Argument_against" => Some(Label::ArgumentAgainst),
            "NoArgument" => Some(Label::NoArgument),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn is_argument(self) -> bool {
        self != Label::NoArgument
    }

    pub fn to_two_class(self) -> TwoClassLabel {
        to_two_class(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TwoClassLabel {
    Argument,
    NoArgument,
}

impl TwoClassLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn to_two_class(label: Label) -> TwoClassLabel {
    match label {
        Label::ArgumentFor | Label::ArgumentAgainst => TwoClassLabel::Argument,
        Label::NoArgument => TwoClassLabel::NoArgument,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetTag {
    Train,
    Val,
    Test,
}

impl SetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SetTag::Train => "train",
            SetTag::Val => "val",
            SetTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SetTag> {
        match s {
            "train" => Some(SetTag::Train),
            "val" => Some(SetTag::Val),
            "test" => Some(SetTag::Test),
            _ => None,
        }
    }
}

/// One annotated (topic, sentence) pair.
///
/// `index` is the example's row position at ingestion and, together with the
/// topic and raw sentence, its identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub index: usize,
    pub topic: Topic,
    pub sentence: Sentence,
    pub label: Label,
    pub set_tag: Option<SetTag>,
}

impl LabeledExample {
    pub fn new(index: usize, topic: &str, sentence: &str, label: Label) -> Result<Self> {
        Ok(Self {
            index,
            topic: Topic::new(topic)?,
            sentence: Sentence::new(sentence)?,
            label,
            set_tag: None,
        })
    }

    pub fn identity(&self) -> (&str, &str, usize) {
        (self.topic.raw(), self.sentence.raw(), self.index)
    }
}

const REQUIRED_COLUMNS: [&str; 3] = ["topic", "sentence", "annotation"];

/// Reads a corpus TSV with header `topic, sentence, annotation[, set]`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_corpus(file, path)
}

pub fn read_corpus<R: Read>(reader: R, path: &Path) -> Result<Vec<LabeledExample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let set_col = column("set");

    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(row + 2);
        let row_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let topic = record.get(idx[0]).unwrap_or_default();
        let sentence = record.get(idx[1]).unwrap_or_default();
        let annotation = record.get(idx[2]).unwrap_or_default().trim();
        let label = Label::from_annotation(annotation)
            .ok_or_else(|| row_err(format!("unknown annotation `{annotation}`")))?;
        let set_tag = match set_col.and_then(|c| record.get(c)).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(SetTag::parse(s).ok_or_else(|| row_err(format!("unknown set `{s}`")))?),
        };
        let topic = Topic::new(topic).map_err(|_| row_err("empty topic".into()))?;
        let sentence = Sentence::new(sentence).map_err(|_| row_err("empty sentence".into()))?;
        out.push(LabeledExample {
            index: row,
            topic,
            sentence,
            label,
            set_tag,
        });
    }
    Ok(out)
}

/// Writes examples in the ingestion TSV format, including the `set` column.
pub fn write_corpus<W: Write>(writer: W, examples: &[LabeledExample]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(writer);
    wtr.write_record(["topic", "sentence", "annotation", "set"])?;
    for ex in examples {
        wtr.write_record([
            ex.topic.raw(),
            ex.sentence.raw(),
            ex.label.annotation(),
            ex.set_tag.map(SetTag::as_str).unwrap_or(""),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Distinct topics in order of first appearance.
pub fn topics(examples: &[LabeledExample]) -> Vec<String> {
    let mut seen = HashSet::new();
    examples
        .iter()
        .filter(|e| seen.insert(e.topic.raw()))
        .map(|e| e.topic.raw().to_string())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    InTopic {
        ratios: [f64; 3],
    },
    CrossTopic {
        held_out_topic: String,
        val_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetadata {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub metadata: SplitMetadata,
}

impl Split {
    /// Topics of train ∪ val that also occur in test.
    pub fn leaked_topics(&self) -> Vec<String> {
        let test: HashSet<&str> = self.test.iter().map(|e| e.topic.raw()).collect();
        let mut leaked: Vec<String> = self
            .train
            .iter()
            .chain(&self.val)
            .map(|e| e.topic.raw())
            .filter(|t| test.contains(t))
            .map(str::to_string)
            .collect();
        leaked.sort();
        leaked.dedup();
        leaked
    }

    fn tagged(mut self) -> Self {
        for (part, tag) in [
            (&mut self.train, SetTag::Train),
            (&mut self.val, SetTag::Val),
            (&mut self.test, SetTag::Test),
        ] {
            for ex in part.iter_mut() {
                ex.set_tag = Some(tag);
            }
        }
        self
    }
}

fn group_by_topic(examples: &[LabeledExample]) -> BTreeMap<usize, (String, Vec<LabeledExample>)> {
    // keyed by first-appearance order so iteration is deterministic
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut groups: BTreeMap<usize, (String, Vec<LabeledExample>)> = BTreeMap::new();
    for ex in examples {
        let next = order.len();
        let key = *order.entry(ex.topic.raw()).or_insert(next);
        groups
            .entry(key)
            .or_insert_with(|| (ex.topic.raw().to_string(), Vec::new()))
            .1
            .push(ex.clone());
    }
    groups
}

/// Per-topic stratified split: each topic is shuffled and cut by `ratios`.
pub fn in_topic_split(examples: &[LabeledExample], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::field("split.ratios", "ratios must be positive"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::field(
            "split.ratios",
            format!("ratios must sum to 1, got {sum}"),
        ));
    }
    let groups = group_by_topic(examples);
    if let Some((_, (topic, exs))) = groups.iter().find(|(_, (_, exs))| exs.len() < 3) {
        return Err(Error::field(
            "split",
            format!(
                "topic `{topic}` has {} examples, at least 3 are needed for an in-topic split",
                exs.len()
            ),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (_, (_, mut exs)) in groups {
        exs.shuffle(&mut rng);
        let [n_train, n_val, _] = part_sizes(exs.len(), ratios);
        let rest = exs.split_off(n_train);
        let (v, t) = rest.split_at(n_val);
        train.extend(exs);
        val.extend_from_slice(v);
        test.extend_from_slice(t);
    }
    Ok(Split {
        train,
        val,
        test,
        metadata: SplitMetadata {
            kind: SplitKind::InTopic { ratios },
            seed,
        },
    }
    .tagged())
}

/// Rounded part sizes; every part gets at least one element when `n >= 3`.
fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    let mut sizes = [n_train.min(n), n_val.min(n - n_train.min(n)), 0];
    sizes[2] = n - sizes[0] - sizes[1];
    for i in 0..3 {
        if sizes[i] == 0 {
            let largest = (0..3).max_by_key(|&j| (sizes[j], usize::MAX - j)).unwrap();
            if sizes[largest] > 1 {
                sizes[largest] -= 1;
                sizes[i] += 1;
            }
        }
    }
    sizes
}

/// Leave-one-topic-out split: all examples of `held_out_topic` form the test set.
pub fn cross_topic_split(
    examples: &[LabeledExample],
    held_out_topic: &str,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::field(
            "split.val_fraction",
            format!("must lie strictly between 0 and 1, got {val_fraction}"),
        ));
    }
    let available = topics(examples);
    if !available.iter().any(|t| t == held_out_topic) {
        return Err(Error::UnknownTopic {
            topic: held_out_topic.to_string(),
            available,
        });
    }
    if available.len() < 2 {
        return Err(Error::field(
            "split.held_out_topic",
            "holding out the only topic leaves nothing to train on",
        ));
    }

    let (test, mut rest): (Vec<_>, Vec<_>) = examples
        .iter()
        .cloned()
        .partition(|e| e.topic.raw() == held_out_topic);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let mut n_val = (val_fraction * rest.len() as f64).round() as usize;
    if rest.len() >= 2 {
        n_val = n_val.clamp(1, rest.len() - 1);
    }
    let train = rest.split_off(n_val);
    Ok(Split {
        train,
        val: rest,
        test,
        metadata: SplitMetadata {
            kind: SplitKind::CrossTopic {
                held_out_topic: held_out_topic.to_string(),
                val_fraction,
            },
            seed,
        },
    }
    .tagged())
}

/// Class counts in `Label::ALL` order.
pub fn label_counts(examples: &[LabeledExample]) -> [usize; 3] {
    let mut counts = [0; 3];
    for ex in examples {
        counts[ex.label.index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(i: usize, topic: &str, label: Label) -> LabeledExample {
        LabeledExample::new(i, topic, &format!("sentence number {i}"), label).unwrap()
    }

    fn corpus(topics: &[&str], per_topic: usize) -> Vec<LabeledExample> {
        let mut out = Vec::new();
        for t in topics {
            for _ in 0..per_topic {
                let i = out.len();
                out.push(example(i, t, Label::ALL[i % 3]));
            }
        }
        out
    }

    #[test]
    fn tokenizer_strips_edge_punctuation() {
        assert_eq!(
            tokenize("  \"Nuclear energy,\" isn't (cheap)!  "),
            vec!["nuclear", "energy", "isn't", "cheap"]
        );
        assert!(tokenize(" ... !! ").is_empty());
    }

    #[test]
    fn loads_three_labels() {
        let tsv = "topic\tsentence\tannotation\tset\n\
                   abortion\tIt protects women.\tArgument_for\ttrain\n\
                   abortion\tIt ends a life.\tArgument_against\ttest\n\
                   abortion\tThe law passed in 1973.\tNoArgument\t\n";
        let exs = read_corpus(tsv.as_bytes(), Path::new("mem.tsv")).unwrap();
        let labels: Vec<_> = exs.iter().map(|e| e.label).collect();
        assert_eq!(labels, Label::ALL);
        assert_eq!(exs[0].set_tag, Some(SetTag::Train));
        assert_eq!(exs[2].set_tag, None);
        assert_eq!(exs[1].sentence.tokens(), ["it", "ends", "a", "life"]);
    }

    #[test]
    fn header_only_is_empty() {
        let exs = read_corpus("topic\tsentence\tannotation\n".as_bytes(), Path::new("x")).unwrap();
        assert!(exs.is_empty());
    }

    #[test]
    fn unknown_annotation_names_row() {
        let tsv = "topic\tsentence\tannotation\n\
                   cloning\tfine sentence\tNoArgument\n\
                   cloning\tbad row\tArgument_maybe\n";
        match read_corpus(tsv.as_bytes(), Path::new("x")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("Argument_maybe"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let tsv = "topic\tsentence\n cloning\tsomething\n";
        assert!(matches!(
            read_corpus(tsv.as_bytes(), Path::new("x")),
            Err(Error::Schema { column, .. }) if column == "annotation"
        ));
    }

    #[test]
    fn empty_sentence_is_row_error() {
        let tsv = "topic\tsentence\tannotation\ncloning\t  ?? \tNoArgument\n";
        assert!(matches!(
            read_corpus(tsv.as_bytes(), Path::new("x")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn truncation() {
        let words: Vec<String> = (0..61).map(|i| format!("w{i}")).collect();
        let s = Sentence::new(words.join(" ")).unwrap();
        let t = truncate(&s, 60);
        assert_eq!(t.len(), 60);
        assert_eq!(t.tokens()[59], "w59");
        assert_eq!(t.raw(), s.raw());

        let short = Sentence::new("one two three four five").unwrap();
        assert_eq!(truncate(&short, 60), short);
        let single = Sentence::new("alone").unwrap();
        assert_eq!(truncate(&single, 1), single);
    }

    #[test]
    fn two_class_view() {
        assert_eq!(to_two_class(Label::ArgumentFor), TwoClassLabel::Argument);
        assert_eq!(
            to_two_class(Label::ArgumentAgainst),
            TwoClassLabel::Argument
        );
        assert_eq!(to_two_class(Label::NoArgument), TwoClassLabel::NoArgument);
    }

    #[test]
    fn in_topic_split_proportions() {
        let topics: Vec<String> = (0..8).map(|i| format!("topic {i}")).collect();
        let refs: Vec<&str> = topics.iter().map(String::as_str).collect();
        let exs = corpus(&refs, 100);
        let split = in_topic_split(&exs, [0.7, 0.1, 0.2], 1).unwrap();
        for t in &topics {
            let count =
                |part: &[LabeledExample]| part.iter().filter(|e| e.topic.raw() == t).count();
            assert_eq!(
                (count(&split.train), count(&split.val), count(&split.test)),
                (70, 10, 20)
            );
        }
        assert_eq!(split, in_topic_split(&exs, [0.7, 0.1, 0.2], 1).unwrap());
        assert_ne!(split, in_topic_split(&exs, [0.7, 0.1, 0.2], 2).unwrap());
    }

    #[test]
    fn in_topic_split_small_topic() {
        let exs = corpus(&["a", "b"], 3);
        let split = in_topic_split(&exs, [0.7, 0.1, 0.2], 3).unwrap();
        assert_eq!(
            (split.train.len(), split.val.len(), split.test.len()),
            (2, 2, 2)
        );

        let mut exs = corpus(&["a"], 5);
        exs.extend(corpus(&["tiny"], 2));
        let err = in_topic_split(&exs, [0.7, 0.1, 0.2], 1).unwrap_err();
        assert!(err.to_string().contains("tiny"), "{err}");
    }

    #[test]
    fn in_topic_split_rejects_bad_ratios() {
        let exs = corpus(&["a"], 10);
        assert!(in_topic_split(&exs, [0.7, 0.2, 0.2], 1).is_err());
        assert!(in_topic_split(&exs, [0.8, 0.0, 0.2], 1).is_err());
    }

    #[test]
    fn cross_topic_holds_out_one_topic() {
        let names = [
            "abortion",
            "cloning",
            "death penalty",
            "gun control",
            "marijuana legalization",
            "minimum wage",
            "nuclear energy",
            "school uniforms",
        ];
        let exs = corpus(&names, 20);
        let split = cross_topic_split(&exs, "abortion", 0.1, 1).unwrap();
        assert!(split.test.iter().all(|e| e.topic.raw() == "abortion"));
        assert_eq!(split.test.len(), 20);
        let seen: HashSet<&str> = split
            .train
            .iter()
            .chain(&split.val)
            .map(|e| e.topic.raw())
            .collect();
        assert_eq!(seen.len(), 7);
        assert!(split.leaked_topics().is_empty());
        assert_eq!(split.val.len(), 14);
        assert_eq!(split, cross_topic_split(&exs, "abortion", 0.1, 1).unwrap());
    }

    #[test]
    fn cross_topic_errors() {
        let exs = corpus(&["only"], 10);
        assert!(cross_topic_split(&exs, "only", 0.1, 1).is_err());
        let exs = corpus(&["a", "b"], 10);
        match cross_topic_split(&exs, "c", 0.1, 1) {
            Err(Error::UnknownTopic { available, .. }) => assert_eq!(available, ["a", "b"]),
            other => panic!("{other:?}"),
        }
        assert!(cross_topic_split(&exs, "a", 1.0, 1).is_err());
    }

    #[test]
    fn write_then_read() {
        let exs = corpus(&["a", "b"], 4);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &exs).unwrap();
        let back = read_corpus(buf.as_slice(), Path::new("x")).unwrap();
        assert_eq!(back, exs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sorted_ids(parts: &[&[LabeledExample]]) -> Vec<usize> {
            let mut ids: Vec<usize> = parts
                .iter()
                .flat_map(|p| p.iter().map(|e| e.index))
                .collect();
            ids.sort_unstable();
            ids
        }

        proptest! {
            #[test]
            fn truncate_is_idempotent(n in 1usize..80, m in 1usize..70) {
                let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
                let s = Sentence::new(words.join(" ")).unwrap();
                let once = s.truncate(m);
                prop_assert_eq!(once.len(), n.min(m));
                prop_assert_eq!(once.truncate(m), once);
            }

            #[test]
            fn splits_partition_input(n_topics in 2usize..6, per_topic in 3usize..30, seed in 0u64..1000) {
                let names: Vec<String> = (0..n_topics).map(|i| format!("t{i}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let exs = corpus(&refs, per_topic);
                let all: Vec<usize> = (0..exs.len()).collect();

                let s = in_topic_split(&exs, [0.6, 0.2, 0.2], seed).unwrap();
                prop_assert_eq!(sorted_ids(&[&s.train, &s.val, &s.test]), all.clone());
                prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());

                let c = cross_topic_split(&exs, &names[seed as usize % n_topics], 0.1, seed).unwrap();
                prop_assert_eq!(sorted_ids(&[&c.train, &c.val, &c.test]), all);
                prop_assert!(c.leaked_topics().is_empty());
            }
        }
    }
}
