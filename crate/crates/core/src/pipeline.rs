//! The commands behind the `topicarg` binary, as library functions.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::{ContextConfig, RunConfig, SplitConfig};
use crate::corpus::{
    cross_topic_split, in_topic_split, load_corpus, tokenize, write_corpus, Label, LabeledExample,
    SetTag, Split,
};
use crate::embeddings::{load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::experiments::{
    augment_test, augment_train, evaluate as evaluate_examples, restart_select, EpochRecord,
    EvaluationReport, Featurizer, RelatedTermsRegistry, Task, TopicSource,
};
use crate::kg::{
    load_triples, map_topic_detailed, score_summary, train_transe, EntityEmbeddingTable,
    TopicMapping, TransEConfig,
};
use crate::models::{Architecture, Family, Model, Vocabulary};
use crate::params::ParamSet;

const ENTITY_PREFIX: &str = "context/entity/";

/// Topic context as recorded in a classifier checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSpec {
    WordEmbeddings,
    Kg {
        triples: PathBuf,
        max_neighbor_candidates: usize,
    },
    None,
}

/// Everything needed to rebuild a trained classifier's input pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub task: Task,
    pub max_words: usize,
    pub embeddings: Option<PathBuf>,
    pub context: ContextSpec,
}

/// A classifier loaded from a checkpoint, ready to featurize and predict.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub model: Model,
    pub featurizer: Featurizer,
    pub spec: ClassifierSpec,
    pub config_digest: String,
}

pub fn build_split(config: &RunConfig, examples: &[LabeledExample]) -> Result<Split> {
    match &config.split {
        SplitConfig::InTopic { ratios } => in_topic_split(examples, *ratios, config.seeds.split),
        SplitConfig::CrossTopic {
            held_out_topic,
            val_fraction,
        } => cross_topic_split(examples, held_out_topic, *val_fraction, config.seeds.split),
    }
}

fn entity_table_from_arrays(
    arrays: &ParamSet,
    entity_prefix: &str,
    relation_prefix: Option<&str>,
) -> Result<EntityEmbeddingTable> {
    let collect = |prefix: &str| -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut names = Vec::new();
        let mut rows = Vec::new();
        for (name, a) in arrays.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                if a.ndim() != 1 {
                    return Err(Error::invalid(format!("array `{name}` should be a vector")));
                }
                names.push(rest.to_string());
                rows.push(a.iter().copied().collect());
            }
        }
        Ok((names, rows))
    };
    let to_matrix = |rows: &[Vec<f64>], dim: usize| -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: r.len(),
                });
            }
            m.row_mut(i)
                .assign(&ndarray::ArrayView1::from(r.as_slice()));
        }
        Ok(m)
    };
    let (entity_names, entity_rows) = collect(entity_prefix)?;
    if entity_names.is_empty() {
        return Err(Error::Empty("checkpoint holds no entity vectors"));
    }
    let dim = entity_rows[0].len();
    let (relation_names, relation_rows) = match relation_prefix {
        Some(p) => collect(p)?,
        None => (Vec::new(), Vec::new()),
    };
    EntityEmbeddingTable::new(
        entity_names,
        to_matrix(&entity_rows, dim)?,
        relation_names,
        to_matrix(&relation_rows, dim)?,
    )
}

/// Reads a `train-kg` checkpoint.
pub fn load_entity_embeddings(dir: impl AsRef<Path>) -> Result<EntityEmbeddingTable> {
    let dir = dir.as_ref();
    let ckpt = Checkpoint::read(dir)?;
    if ckpt.manifest.kind != CheckpointKind::EntityEmbeddings {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            message: "not an entity-embedding checkpoint".into(),
        });
    }
    entity_table_from_arrays(&ckpt.arrays, "entity/", Some("relation/"))
}

fn entity_arrays(
    table: &EntityEmbeddingTable,
    entity_prefix: &str,
    relation_prefix: Option<&str>,
) -> ParamSet {
    let mut arrays = ParamSet::new();
    for (i, name) in table.entity_names().iter().enumerate() {
        arrays.insert(
            format!("{entity_prefix}{name}"),
            table.entity_vectors().row(i).to_owned().into_dyn(),
        );
    }
    if let Some(prefix) = relation_prefix {
        for (i, name) in table.relation_names().iter().enumerate() {
            arrays.insert(
                format!("{prefix}{name}"),
                table.relation_vectors().row(i).to_owned().into_dyn(),
            );
        }
    }
    arrays
}

/// Featurizer and checkpoint context record for a run; the entity table is
/// rounded to `f32` so a reloaded checkpoint reproduces it exactly.
fn build_featurizer(config: &RunConfig, split: &Split) -> Result<(Featurizer, ContextSpec)> {
    let max_words = config.hyperparameters.max_words;
    match config.model.family {
        Family::Attention => {
            let words = split.train.iter().flat_map(|e| {
                e.topic
                    .tokens()
                    .iter()
                    .chain(e.sentence.truncate(max_words).tokens().iter())
                    .cloned()
                    .collect::<Vec<_>>()
            });
            let featurizer = Featurizer::Attention {
                vocab: Vocabulary::from_words(words),
                use_topic: config.model.use_topic,
                max_words,
            };
            Ok((featurizer, ContextSpec::None))
        }
        Family::Recurrent => {
            let path = config
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::field("embeddings", "required for the recurrent family"))?;
            let words = load_embeddings(path)?;
            let (topic, spec) = if !config.model.topic_aware() {
                (TopicSource::None, ContextSpec::None)
            } else {
                match &config.context {
                    ContextConfig::WordEmbeddings => {
                        (TopicSource::Words, ContextSpec::WordEmbeddings)
                    }
                    ContextConfig::None => {
                        return Err(Error::field(
                            "context",
                            "a topic-aware model needs a context source",
                        ))
                    }
                    ContextConfig::Kg {
                        triples,
                        transe,
                        entity_embeddings,
                        max_neighbor_candidates,
                    } => {
                        let graph = load_triples(triples)?;
                        let mut entities = match entity_embeddings {
                            Some(dir) => load_entity_embeddings(dir)?,
                            None => train_transe(&graph, transe, config.seeds.base)?,
                        };
                        entities.round_to_f32();
                        (
                            TopicSource::Kg {
                                graph,
                                entities,
                                max_neighbor_candidates: *max_neighbor_candidates,
                            },
                            ContextSpec::Kg {
                                triples: triples.clone(),
                                max_neighbor_candidates: *max_neighbor_candidates,
                            },
                        )
                    }
                }
            };
            Ok((
                Featurizer::Recurrent {
                    words,
                    topic,
                    max_words,
                },
                spec,
            ))
        }
    }
}

/// One restart in `runs.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub selected: bool,
    pub validation_macro_f1: Option<f64>,
    pub final_train_loss: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: EvaluationReport,
    pub runs: Vec<RunSummary>,
    pub checkpoint: PathBuf,
    pub config_digest: String,
}

fn write_tsv(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, examples)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Splits the corpus, trains with restarts, evaluates the selected run on the
/// test part and writes `checkpoint/`, `runs.json`, `report.json` and the
/// three split TSVs into `output`.
pub fn train(config: &RunConfig, output: &Path) -> Result<TrainOutcome> {
    let examples = load_corpus(&config.corpus)?;
    if examples.is_empty() {
        return Err(Error::Empty("corpus has no examples"));
    }
    let split = build_split(config, &examples)?;
    let (featurizer, context) = build_featurizer(config, &split)?;
    let arch = Architecture::new(config.model.clone(), featurizer.input_dims())?;
    log::info!(
        "training {:?} model: {} train / {} val / {} test examples, {} restarts",
        arch.config.family,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        config.seeds.restarts
    );
    let (best, runs) = restart_select(
        &arch,
        &featurizer,
        &split,
        config.task,
        &config.hyperparameters,
        config.seeds.restarts,
        config.seeds.base,
    )?;

    let spec = ClassifierSpec {
        architecture: arch.clone(),
        task: config.task,
        max_words: config.hyperparameters.max_words,
        embeddings: match arch.config.family {
            Family::Recurrent => config.embeddings.clone(),
            Family::Attention => None,
        },
        context,
    };
    let manifest_config = json!({
        "classifier": spec,
        "training": {
            "corpus": config.corpus,
            "split": config.split,
            "hyperparameters": config.hyperparameters,
            "seeds": config.seeds,
        },
    });

    // Checkpoints hold f32; evaluate exactly what gets stored.
    let mut params = best.params.clone();
    params.round_to_f32();
    let model = Model::new(arch, params)?;
    let mut report = evaluate_examples(&model, &featurizer, &split.test, config.task)?;

    let mut arrays = model.params().clone();
    if let Featurizer::Recurrent {
        topic: TopicSource::Kg { entities, .. },
        ..
    } = &featurizer
    {
        for (name, a) in entity_arrays(entities, ENTITY_PREFIX, None).iter() {
            arrays.insert(name.clone(), a.clone());
        }
    }
    let vocabulary = match &featurizer {
        Featurizer::Attention { vocab, .. } => Some(vocab.tokens().to_vec()),
        Featurizer::Recurrent { .. } => None,
    };
    let ckpt = Checkpoint::new(
        CheckpointKind::Classifier,
        manifest_config,
        arrays,
        vocabulary,
    );
    report.split = Some(split.metadata.clone());
    report.config_digest = Some(ckpt.manifest.config_digest.clone());
    report.seed = Some(best.seed);

    fs::create_dir_all(output)?;
    let checkpoint = output.join("checkpoint");
    ckpt.write(&checkpoint)?;
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|r| RunSummary {
            seed: r.seed,
            selected: r.seed == best.seed,
            validation_macro_f1: r.validation_macro_f1(),
            final_train_loss: r.history.last().map(|h| h.train_loss).unwrap_or(f64::NAN),
            history: r.history.clone(),
        })
        .collect();
    write_json(&output.join("runs.json"), &summaries)?;
    write_json(&output.join("report.json"), &report)?;
    write_tsv(&output.join("train.tsv"), &split.train)?;
    write_tsv(&output.join("val.tsv"), &split.val)?;
    write_tsv(&output.join("test.tsv"), &split.test)?;
    Ok(TrainOutcome {
        report,
        runs: summaries,
        checkpoint,
        config_digest: ckpt.manifest.config_digest,
    })
}

pub fn load_classifier(dir: impl AsRef<Path>) -> Result<Classifier> {
    let dir = dir.as_ref();
    let ckpt = Checkpoint::read(dir)?;
    let bad = |message: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        message,
    };
    if ckpt.manifest.kind != CheckpointKind::Classifier {
        return Err(bad("not a classifier checkpoint".into()));
    }
    let spec: ClassifierSpec = serde_json::from_value(ckpt.manifest.config["classifier"].clone())
        .map_err(|e| bad(format!("unreadable classifier config: {e}")))?;
    let mut params = ckpt.arrays.clone();
    let entity_names: Vec<String> = params
        .iter()
        .filter(|(n, _)| n.starts_with(ENTITY_PREFIX))
        .map(|(n, _)| n.clone())
        .collect();
    let mut entity_arrays = ParamSet::new();
    for name in entity_names {
        let a = params.remove(&name).expect("listed above");
        entity_arrays.insert(name, a);
    }
    let model = Model::new(spec.architecture.clone(), params)?;
    let featurizer = match spec.architecture.config.family {
        Family::Attention => {
            let tokens = ckpt
                .manifest
                .vocabulary
                .clone()
                .ok_or_else(|| bad("attention checkpoint has no vocabulary".into()))?;
            Featurizer::Attention {
                vocab: Vocabulary::from_tokens(tokens)?,
                use_topic: spec.architecture.config.use_topic,
                max_words: spec.max_words,
            }
        }
        Family::Recurrent => {
            let path = spec
                .embeddings
                .as_ref()
                .ok_or_else(|| bad("recurrent checkpoint names no embedding file".into()))?;
            let words = load_embeddings(path)?;
            let topic = match &spec.context {
                ContextSpec::WordEmbeddings => TopicSource::Words,
                ContextSpec::None => TopicSource::None,
                ContextSpec::Kg {
                    triples,
                    max_neighbor_candidates,
                } => TopicSource::Kg {
                    graph: load_triples(triples)?,
                    entities: entity_table_from_arrays(&entity_arrays, ENTITY_PREFIX, None)?,
                    max_neighbor_candidates: *max_neighbor_candidates,
                },
            };
            Featurizer::Recurrent {
                words,
                topic,
                max_words: spec.max_words,
            }
        }
    };
    Ok(Classifier {
        model,
        featurizer,
        spec,
        config_digest: ckpt.manifest.config_digest,
    })
}

/// Scores a checkpoint on a corpus, optionally restricted to one `set`.
pub fn evaluate(
    checkpoint: &Path,
    corpus: &Path,
    task: Task,
    set: Option<SetTag>,
) -> Result<EvaluationReport> {
    let classifier = load_classifier(checkpoint)?;
    let mut examples = load_corpus(corpus)?;
    if let Some(tag) = set {
        examples.retain(|e| e.set_tag == Some(tag));
    }
    let mut report = evaluate_examples(&classifier.model, &classifier.featurizer, &examples, task)?;
    report.config_digest = Some(classifier.config_digest);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Train,
    Test,
}

/// Topic-dependent augmentation of a corpus file; the built-in registry is
/// used when no registry file is given.
pub fn augment(
    corpus: &Path,
    registry: Option<&Path>,
    fraction: f64,
    seed: u64,
    mode: AugmentMode,
) -> Result<Vec<LabeledExample>> {
    let examples = load_corpus(corpus)?;
    let registry = match registry {
        Some(p) => RelatedTermsRegistry::load(p)?,
        None => RelatedTermsRegistry::builtin(),
    };
    match mode {
        AugmentMode::Train => augment_train(&examples, &registry, fraction, seed),
        AugmentMode::Test => augment_test(&examples, &registry, fraction, seed),
    }
}

/// Function words ignored by the retrieval stub.
pub const STOPWORDS: [&str; 50] = [
    "a", "about", "against", "all", "an", "and", "are", "as", "at", "be", "but", "by", "can", "do",
    "for", "from", "has", "have", "he", "her", "his", "i", "if", "in", "is", "it", "its", "more",
    "no", "not", "of", "on", "or", "our", "she", "should", "so", "than", "that", "the", "their",
    "they", "this", "to", "was", "we", "were", "will", "with", "you",
];

fn content_tokens(text: &str) -> HashSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Distinct sentences sharing at least one non-stopword token with `topic`,
/// in corpus order.
pub fn retrieve<'a>(examples: &'a [LabeledExample], topic: &str) -> Vec<&'a LabeledExample> {
    let query = content_tokens(topic);
    let mut seen = HashSet::new();
    examples
        .iter()
        .filter(|e| e.sentence.tokens().iter().any(|t| query.contains(t)))
        .filter(|e| seen.insert(e.sentence.raw().to_string()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub sentence: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGroup {
    pub name: String,
    pub hits: Vec<SearchHit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub topic: String,
    pub retrieved: usize,
    pub groups: Vec<SearchGroup>,
}

/// Two-step search: keyword retrieval, then classification of every
/// retrieved sentence against the query topic. Three-class models yield
/// `pro` and `contra` groups, two-class models a single `argument` group;
/// each is sorted by predicted probability and capped at `top_k`.
pub fn search(
    classifier: &Classifier,
    examples: &[LabeledExample],
    topic: &str,
    top_k: usize,
) -> Result<SearchResult> {
    let retrieved = retrieve(examples, topic);
    let names: &[&str] = match classifier.model.architecture().num_classes() {
        3 => &["pro", "contra"],
        _ => &["argument"],
    };
    let mut groups: Vec<SearchGroup> = names
        .iter()
        .map(|n| SearchGroup {
            name: n.to_string(),
            hits: Vec::new(),
        })
        .collect();
    for e in &retrieved {
        let query = LabeledExample::new(e.index, topic, e.sentence.raw(), Label::NoArgument)?;
        let input = classifier.featurizer.encode(&query)?;
        let dist = classifier.model.predict(&input)?;
        let class = dist.argmax();
        if let Some(g) = groups.get_mut(class) {
            g.hits.push(SearchHit {
                sentence: e.sentence.raw().to_string(),
                probability: dist.get(class),
            });
        }
    }
    for g in &mut groups {
        // stable: equal probabilities keep corpus order
        g.hits
            .sort_by(|a, b| b.probability.total_cmp(&a.probability));
        g.hits.truncate(top_k);
    }
    Ok(SearchResult {
        topic: topic.to_string(),
        retrieved: retrieved.len(),
        groups,
    })
}

pub fn map_topic(
    topic: &str,
    triples: &Path,
    embeddings: &Path,
    max_neighbor_candidates: usize,
) -> Result<TopicMapping> {
    let graph = load_triples(triples)?;
    let words: EmbeddingTable = load_embeddings(embeddings)?;
    map_topic_detailed(
        &crate::corpus::Topic::new(topic)?,
        &graph,
        &words,
        max_neighbor_candidates,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgSummary {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub mean_true_score: f64,
    pub mean_corrupted_score: f64,
}

/// Trains TransE on a triples file and writes an entity-embedding
/// checkpoint with one array per entity and per relation.
pub fn train_kg(
    triples: &Path,
    config: &TransEConfig,
    seed: u64,
    output: &Path,
) -> Result<KgSummary> {
    let graph = load_triples(triples)?;
    let mut table = train_transe(&graph, config, seed)?;
    table.round_to_f32();
    let (mean_true, mean_corrupt) = score_summary(&table, &graph)?;
    let arrays = entity_arrays(&table, "entity/", Some("relation/"));
    let manifest_config = json!({
        "transe": config,
        "seed": seed,
        "triples": triples,
    });
    Checkpoint::new(
        CheckpointKind::EntityEmbeddings,
        manifest_config,
        arrays,
        None,
    )
    .write(output)?;
    Ok(KgSummary {
        entities: graph.entities().len(),
        relations: graph.relations().len(),
        triples: graph.triples().len(),
        mean_true_score: mean_true,
        mean_corrupted_score: mean_corrupt,
    })
}
