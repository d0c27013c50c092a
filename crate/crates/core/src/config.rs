//! JSON run configuration for `topicarg train`.
//!
//! Unknown keys are rejected, relative paths resolve against the config
//! file's directory, and every validation failure names the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{Hyperparameters, Task};
use crate::kg::{TransEConfig, DEFAULT_MAX_NEIGHBOR_CANDIDATES};
use crate::models::{Family, ModelConfig};

fn default_ratios() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_val_fraction() -> f64 {
    0.1
}

fn default_candidates() -> usize {
    DEFAULT_MAX_NEIGHBOR_CANDIDATES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    InTopic {
        #[serde(default = "default_ratios")]
        ratios: [f64; 3],
    },
    CrossTopic {
        held_out_topic: String,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::InTopic {
            ratios: default_ratios(),
        }
    }
}

/// Where a recurrent model's topic vectors come from. The attention family
/// reads topic tokens directly and ignores this.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextConfig {
    #[default]
    WordEmbeddings,
    Kg {
        triples: PathBuf,
        #[serde(default)]
        transe: TransEConfig,
        /// A `train-kg` checkpoint; TransE is trained on the fly when absent.
        #[serde(default)]
        entity_embeddings: Option<PathBuf>,
        #[serde(default = "default_candidates")]
        max_neighbor_candidates: usize,
    },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub base: u64,
    pub restarts: usize,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 1,
            base: 1,
            restarts: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn existing(base: &Path, path: &Path, field: &str) -> Result<PathBuf> {
    let joined = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    };
    joined
        .canonicalize()
        .map_err(|e| Error::field(field, format!("{}: {e}", joined.display())))
}

/// Turns a serde error into a field error; a missing key is named in full.
fn field_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let message = e.inner().to_string();
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    let field = match (path.as_str(), missing) {
        (".", Some(m)) => m.to_string(),
        (p, Some(m)) => format!("{p}.{m}"),
        (p, None) => p.to_string(),
    };
    Error::field(field, message)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        Self::from_json(&text, &base)
    }

    /// Parses, resolves relative paths against `base` and validates.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: RunConfig = serde_path_to_error::deserialize(de).map_err(field_error)?;
        config.resolve(base)?;
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) -> Result<()> {
        self.corpus = existing(base, &self.corpus, "corpus")?;
        if let Some(p) = &self.embeddings {
            self.embeddings = Some(existing(base, p, "embeddings")?);
        }
        if let ContextConfig::Kg {
            triples,
            entity_embeddings,
            ..
        } = &mut self.context
        {
            *triples = existing(base, triples, "context.triples")?;
            if let Some(p) = entity_embeddings {
                *p = existing(base, p, "context.entity_embeddings")?;
            }
        }
        if let Some(out) = &self.output {
            if out.is_relative() {
                self.output = Some(base.join(out));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyperparameters.validate()?;
        if self.model.num_classes != self.task.num_classes() {
            return Err(Error::field(
                "model.num_classes",
                format!(
                    "{} does not match task {:?}",
                    self.model.num_classes, self.task
                ),
            ));
        }
        match &self.split {
            SplitConfig::InTopic { ratios } => {
                if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0))
                    || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return Err(Error::field(
                        "split.ratios",
                        "must be positive and sum to 1",
                    ));
                }
            }
            SplitConfig::CrossTopic {
                held_out_topic,
                val_fraction,
            } => {
                if held_out_topic.trim().is_empty() {
                    return Err(Error::field("split.held_out_topic", "must not be empty"));
                }
                if !(*val_fraction > 0.0 && *val_fraction < 1.0) {
                    return Err(Error::field(
                        "split.val_fraction",
                        "must lie strictly between 0 and 1",
                    ));
                }
            }
        }
        if self.seeds.restarts == 0 {
            return Err(Error::field("seeds.restarts", "must be at least 1"));
        }
        if self.model.family == Family::Recurrent {
            if self.embeddings.is_none() {
                return Err(Error::field(
                    "embeddings",
                    "the recurrent family needs a word-embedding file",
                ));
            }
            if self.model.topic_aware() && self.context == ContextConfig::None {
                return Err(Error::field(
                    "context",
                    "a topic-aware recurrent model needs a context source (word_embeddings or kg)",
                ));
            }
            if let ContextConfig::Kg {
                transe,
                max_neighbor_candidates,
                ..
            } = &self.context
            {
                transe.validate().map_err(|e| match e {
                    Error::ConfigField { field, message } => {
                        Error::field(format!("context.{field}"), message)
                    }
                    other => other,
                })?;
                if *max_neighbor_candidates == 0 {
                    return Err(Error::field(
                        "context.max_neighbor_candidates",
                        "must be at least 1",
                    ));
                }
            }
        }
        Ok(())
    }
}
