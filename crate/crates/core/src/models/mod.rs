//! Topic-aware sentence classifiers.
//!
//! Two families share one parameter store ([`ParamSet`]) and one training
//! objective:
//!
//! * **recurrent**: one BiLSTM encodes the sentence's word vectors, a second
//!   encodes the topic context vectors, the two final states are aggregated
//!   (`add`, `hadamard`, `concat`, or `none` for a topic-blind baseline) and
//!   fed to an affine + softmax head;
//! * **attention**: a transformer encoder over
//!   `[CLS] topic [SEP] sentence [SEP]` with segment embeddings; the final
//!   `[CLS]` state feeds the head.
//!
//! Gradients are computed analytically (see [`Model::loss_and_gradient`]).

mod attention;
mod loss;
mod recurrent;
pub mod vocab;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub use attention::{build_sequence, EncodedSequence};
pub use loss::{
    class_weights, softmax, weighted_cross_entropy, ClassDistribution, PROBABILITY_FLOOR,
};
pub use recurrent::Encoder;
pub use vocab::Vocabulary;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Recurrent,
    Attention,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Add,
    Hadamard,
    #[default]
    Concat,
    /// Topic-blind: the sentence state passes through unchanged.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSettings {
    pub layers: usize,
    pub heads: usize,
    pub model_dimension: usize,
    pub max_sequence_length: usize,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dimension: 128,
            max_sequence_length: 128,
        }
    }
}

impl AttentionSettings {
    pub fn feedforward_dimension(&self) -> usize {
        4 * self.model_dimension
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub hidden_dimension: usize,
    pub num_classes: usize,
    pub aggregation: Aggregation,
    pub use_topic: bool,
    pub attention: AttentionSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Recurrent,
            hidden_dimension: 32,
            num_classes: 2,
            aggregation: Aggregation::Concat,
            use_topic: true,
            attention: AttentionSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::field("model.num_classes", "must be 2 or 3"));
        }
        match self.family {
            Family::Recurrent => {
                if self.hidden_dimension == 0 {
                    return Err(Error::field("model.hidden_dimension", "must be at least 1"));
                }
                if (self.aggregation == Aggregation::None) == self.use_topic {
                    return Err(Error::field(
                        "model.aggregation",
                        "aggregation `none` must be paired with use_topic = false, and vice versa",
                    ));
                }
            }
            Family::Attention => {
                let a = &self.attention;
                if a.layers == 0 || a.heads == 0 || a.model_dimension == 0 {
                    return Err(Error::field(
                        "model.attention",
                        "layers, heads and model_dimension must be positive",
                    ));
                }
                if !a.model_dimension.is_multiple_of(a.heads) {
                    return Err(Error::field(
                        "model.attention.heads",
                        format!(
                            "model_dimension {} is not divisible by {} heads",
                            a.model_dimension, a.heads
                        ),
                    ));
                }
                if a.max_sequence_length < 3 {
                    return Err(Error::field(
                        "model.attention.max_sequence_length",
                        "must be at least 3",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether the model reads the topic at all.
    pub fn topic_aware(&self) -> bool {
        match self.family {
            Family::Recurrent => self.aggregation != Aggregation::None,
            Family::Attention => self.use_topic,
        }
    }
}

/// Input sizes that come from data rather than from the user.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDims {
    /// Sentence word-vector dimension (recurrent).
    pub sentence: usize,
    /// Topic context vector dimension (recurrent, topic-aware).
    pub topic: usize,
    /// Token vocabulary size including reserved tokens (attention).
    pub vocabulary: usize,
}

/// A model configuration with its data-dependent sizes resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub config: ModelConfig,
    pub dims: InputDims,
}

impl Architecture {
    pub fn new(config: ModelConfig, dims: InputDims) -> Result<Self> {
        let arch = Self { config, dims };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        match self.config.family {
            Family::Recurrent => {
                if self.dims.sentence == 0 {
                    return Err(Error::invalid("sentence input dimension must be positive"));
                }
                if self.config.topic_aware() && self.dims.topic == 0 {
                    return Err(Error::invalid("topic input dimension must be positive"));
                }
            }
            Family::Attention => {
                if self.dims.vocabulary < vocab::RESERVED.len() {
                    return Err(Error::invalid(
                        "vocabulary must contain the reserved tokens",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Named array shapes; the names are the checkpoint contract.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        match self.config.family {
            Family::Recurrent => recurrent::param_shapes(self),
            Family::Attention => attention::param_shapes(self),
        }
    }

    /// Seeded random initialization.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let hidden = self.config.hidden_dimension;
        let mut params = ParamSet::new();
        for (name, shape) in self.param_shapes() {
            let leaf = name.rsplit('/').next().unwrap_or("");
            let mut a = ArrayD::<f64>::zeros(IxDyn(&shape));
            match self.config.family {
                Family::Recurrent => match leaf {
                    "W" | "U" => {
                        let bound = 1.0 / (hidden as f64).sqrt();
                        a.mapv_inplace(|_| rng.gen_range(-bound..bound));
                    }
                    "b" => {
                        // forget-gate slice starts open
                        for i in hidden..2 * hidden {
                            a[[i]] = 1.0;
                        }
                    }
                    "W_final" => {
                        let bound = 1.0 / (shape[0] as f64).sqrt();
                        a.mapv_inplace(|_| rng.gen_range(-bound..bound));
                    }
                    _ => {}
                },
                Family::Attention => {
                    if leaf.ends_with("_gamma") {
                        a.fill(1.0);
                    } else if !(leaf.ends_with("_b")
                        || leaf.ends_with("_beta")
                        || leaf == "b_final")
                    {
                        a.mapv_inplace(|_| normal.sample(&mut rng));
                    }
                }
            }
            params.insert(name, a);
        }
        params
    }
}

/// Recurrent input: one row per token / entity.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentInput {
    pub sentence: Array2<f64>,
    pub topic: Option<Array2<f64>>,
}

/// Attention input: vocabulary ids without the reserved framing tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionInput {
    pub sentence: Vec<usize>,
    pub topic: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    Recurrent(RecurrentInput),
    Attention(AttentionInput),
}

/// An architecture together with parameters whose shapes match it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: ParamSet,
}

const GRAD_CHUNK: usize = 4;

impl Model {
    pub fn new(arch: Architecture, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let bad = params.shape_mismatches(&arch.param_shapes());
        if !bad.is_empty() {
            return Err(Error::ShapeMismatch(bad));
        }
        if !params.is_finite() {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(Self { arch, params })
    }

    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = arch.init_params(seed);
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn logits(&self, input: &ModelInput) -> Result<Array1<f64>> {
        match (self.arch.config.family, input) {
            (Family::Recurrent, ModelInput::Recurrent(x)) => {
                recurrent::forward(&self.arch, &self.params, x).map(|(z, _)| z)
            }
            (Family::Attention, ModelInput::Attention(x)) => {
                let seq = attention::sequence_for(&self.arch, x)?;
                attention::forward(&self.arch, &self.params, &seq).map(|(z, _)| z)
            }
            _ => Err(Error::invalid("input kind does not match the model family")),
        }
    }

    pub fn predict(&self, input: &ModelInput) -> Result<ClassDistribution> {
        let z = self.logits(input)?;
        Ok(softmax(z.as_slice().expect("contiguous")))
    }

    /// Mean weighted cross-entropy over a batch.
    pub fn loss(&self, batch: &[(ModelInput, usize)], class_weights: &[f64]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let partials: Vec<Result<f64>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut loss = 0.0;
                for (input, y) in chunk {
                    loss += weighted_cross_entropy(&self.predict(input)?, *y, class_weights)?;
                }
                Ok(loss)
            })
            .collect();
        let mut total = 0.0;
        for part in partials {
            total += part?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean weighted cross-entropy over the batch and its exact gradient,
    /// keyed like the parameters. Examples are processed in fixed-size chunks
    /// and summed in order, so the result does not depend on thread count.
    pub fn loss_and_gradient(
        &self,
        batch: &[(ModelInput, usize)],
        class_weights: &[f64],
    ) -> Result<(f64, ParamSet)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if class_weights.len() != self.arch.num_classes() {
            return Err(Error::Dimension {
                expected: self.arch.num_classes(),
                got: class_weights.len(),
            });
        }
        let partials: Vec<Result<(f64, ParamSet)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = self.params.zeros_like();
                let mut loss = 0.0;
                for (input, y) in chunk {
                    loss += self.accumulate_example(input, *y, class_weights, &mut grad)?;
                }
                Ok((loss, grad))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = self.params.zeros_like();
        for part in partials {
            let (l, g) = part?;
            total += l;
            grad.scaled_add(1.0, &g);
        }
        let n = batch.len() as f64;
        grad.scale(1.0 / n);
        Ok((total / n, grad))
    }

    fn accumulate_example(
        &self,
        input: &ModelInput,
        y: usize,
        weights: &[f64],
        grad: &mut ParamSet,
    ) -> Result<f64> {
        let k = self.arch.num_classes();
        if y >= k {
            return Err(Error::invalid(format!(
                "class {y} out of range for {k} classes"
            )));
        }
        let dlogits = |z: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
            let dist = softmax(z.as_slice().expect("contiguous"));
            let loss = weighted_cross_entropy(&dist, y, weights)?;
            let mut d = Array1::from(dist.probabilities().to_vec());
            if dist.get(y) >= PROBABILITY_FLOOR {
                d[y] -= 1.0;
                d *= weights[y];
            } else {
                // clamped region: the loss is constant in the logits
                d.fill(0.0);
            }
            Ok((loss, d))
        };
        match (self.arch.config.family, input) {
            (Family::Recurrent, ModelInput::Recurrent(x)) => {
                let (z, cache) = recurrent::forward(&self.arch, &self.params, x)?;
                let (loss, dz) = dlogits(&z)?;
                recurrent::backward(&self.arch, &self.params, x, &cache, dz.view(), grad);
                Ok(loss)
            }
            (Family::Attention, ModelInput::Attention(x)) => {
                let seq = attention::sequence_for(&self.arch, x)?;
                let (z, cache) = attention::forward(&self.arch, &self.params, &seq)?;
                let (loss, dz) = dlogits(&z)?;
                attention::backward(&self.arch, &self.params, &seq, &cache, dz.view(), grad);
                Ok(loss)
            }
            _ => Err(Error::invalid("input kind does not match the model family")),
        }
    }
}

/// Final forward and backward BiLSTM states, concatenated (length `2h`).
pub fn encode_sequence_birnn(
    vectors: ArrayView2<'_, f64>,
    params: &ParamSet,
    which: Encoder,
) -> Result<Array1<f64>> {
    recurrent::encode_checked(vectors, params, which)
}

/// Combines sentence and topic states.
pub fn aggregate(
    h_s: ArrayView1<'_, f64>,
    h_t: ArrayView1<'_, f64>,
    mode: Aggregation,
) -> Result<Array1<f64>> {
    recurrent::aggregate(h_s, h_t, mode)
}

pub fn classify_recurrent(
    sentence_vectors: ArrayView2<'_, f64>,
    topic_vectors: Option<ArrayView2<'_, f64>>,
    params: &ParamSet,
    arch: &Architecture,
) -> Result<ClassDistribution> {
    if arch.config.family != Family::Recurrent {
        return Err(Error::invalid("architecture is not recurrent"));
    }
    let input = RecurrentInput {
        sentence: sentence_vectors.to_owned(),
        topic: topic_vectors.map(|t| t.to_owned()),
    };
    let (z, _) = recurrent::forward(arch, params, &input)?;
    Ok(softmax(z.as_slice().expect("contiguous")))
}

pub fn classify_attention(
    sentence_tokens: &[usize],
    topic_tokens: &[usize],
    params: &ParamSet,
    arch: &Architecture,
) -> Result<ClassDistribution> {
    if arch.config.family != Family::Attention {
        return Err(Error::invalid("architecture is not attention-based"));
    }
    let input = AttentionInput {
        sentence: sentence_tokens.to_vec(),
        topic: topic_tokens.to_vec(),
    };
    let seq = attention::sequence_for(arch, &input)?;
    let (z, _) = attention::forward(arch, params, &seq)?;
    Ok(softmax(z.as_slice().expect("contiguous")))
}

/// Classifies an explicitly framed (and possibly padded) sequence.
pub fn classify_sequence(
    seq: &EncodedSequence,
    params: &ParamSet,
    arch: &Architecture,
) -> Result<ClassDistribution> {
    let (z, _) = attention::forward(arch, params, seq)?;
    Ok(softmax(z.as_slice().expect("contiguous")))
}

/// Gradient of the mean weighted cross-entropy of `batch` w.r.t. `params`.
pub fn loss_gradient(
    params: &ParamSet,
    batch: &[(ModelInput, usize)],
    arch: &Architecture,
    class_weights: &[f64],
) -> Result<ParamSet> {
    let model = Model::new(arch.clone(), params.clone())?;
    model
        .loss_and_gradient(batch, class_weights)
        .map(|(_, g)| g)
}

#[cfg(test)]
mod tests;
