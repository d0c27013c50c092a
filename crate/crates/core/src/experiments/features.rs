use std::collections::HashMap;

use ndarray::Array2;

use crate::corpus::{LabeledExample, Topic};
use crate::embeddings::{embed_tokens, EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::kg::{map_topic, topic_context_vectors, EntityEmbeddingTable, KnowledgeGraph};
use crate::models::{AttentionInput, InputDims, ModelInput, RecurrentInput, Vocabulary};

/// Where a recurrent model's topic vectors come from.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum TopicSource {
    /// The topic's own words, looked up in the word table.
    Words,
    /// Entities found by topic mapping, represented by their TransE vectors.
    Kg {
        graph: KnowledgeGraph,
        entities: EntityEmbeddingTable,
        max_neighbor_candidates: usize,
    },
    /// Topic-blind.
    None,
}

/// Turns labelled examples into model inputs. Sentences are truncated to
/// `max_words` tokens before anything else happens.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Featurizer {
    Recurrent {
        words: EmbeddingTable,
        topic: TopicSource,
        max_words: usize,
    },
    Attention {
        vocab: Vocabulary,
        use_topic: bool,
        max_words: usize,
    },
}

impl Featurizer {
    pub fn input_dims(&self) -> InputDims {
        match self {
            Featurizer::Recurrent { words, topic, .. } => InputDims {
                sentence: words.dimension(),
                topic: match topic {
                    TopicSource::Words => words.dimension(),
                    TopicSource::Kg { entities, .. } => entities.dimension(),
                    TopicSource::None => 0,
                },
                vocabulary: 0,
            },
            Featurizer::Attention { vocab, .. } => InputDims {
                sentence: 0,
                topic: 0,
                vocabulary: vocab.len(),
            },
        }
    }

    fn max_words(&self) -> usize {
        match self {
            Featurizer::Recurrent { max_words, .. } | Featurizer::Attention { max_words, .. } => {
                *max_words
            }
        }
    }

    /// Topic vectors for a recurrent model, `None` when topic-blind.
    pub fn topic_vectors(&self, topic: &Topic) -> Result<Option<Array2<f64>>> {
        match self {
            Featurizer::Recurrent {
                words,
                topic: source,
                ..
            } => match source {
                TopicSource::Words => {
                    embed_tokens(words, topic.tokens(), OovPolicy::Zero).map(Some)
                }
                TopicSource::Kg {
                    graph,
                    entities,
                    max_neighbor_candidates,
                } => {
                    let mapped = map_topic(topic, graph, words, *max_neighbor_candidates)?;
                    topic_context_vectors(&mapped, entities).map(Some)
                }
                TopicSource::None => Ok(None),
            },
            Featurizer::Attention { .. } => Ok(None),
        }
    }

    fn encode_with(
        &self,
        example: &LabeledExample,
        topic_vectors: Option<Array2<f64>>,
    ) -> Result<ModelInput> {
        let sentence = example.sentence.truncate(self.max_words());
        Ok(match self {
            Featurizer::Recurrent { words, .. } => ModelInput::Recurrent(RecurrentInput {
                sentence: embed_tokens(words, sentence.tokens(), OovPolicy::Zero)?,
                topic: topic_vectors,
            }),
            Featurizer::Attention {
                vocab, use_topic, ..
            } => ModelInput::Attention(AttentionInput {
                sentence: vocab.ids(sentence.tokens()),
                topic: if *use_topic {
                    vocab.ids(example.topic.tokens())
                } else {
                    Vec::new()
                },
            }),
        })
    }

    pub fn encode(&self, example: &LabeledExample) -> Result<ModelInput> {
        self.encode_with(example, self.topic_vectors(&example.topic)?)
    }

    /// Encodes a batch, resolving each distinct topic once. Errors carry the
    /// position of the offending example.
    pub fn encode_all(&self, examples: &[LabeledExample]) -> Result<Vec<ModelInput>> {
        let mut topics: HashMap<&str, Option<Array2<f64>>> = HashMap::new();
        examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let annotate = |source: Error| Error::Example {
                    index: i,
                    source: Box::new(source),
                };
                let tv = match topics.get(e.topic.raw()) {
                    Some(tv) => tv.clone(),
                    None => {
                        let tv = self.topic_vectors(&e.topic).map_err(annotate)?;
                        topics.insert(e.topic.raw(), tv.clone());
                        tv
                    }
                };
                self.encode_with(e, tv).map_err(annotate)
            })
            .collect()
    }
}
