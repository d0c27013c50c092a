use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::Featurizer;
use super::metrics::{macro_f1, EvaluationReport, Task};
use crate::corpus::{LabeledExample, Split, DEFAULT_MAX_WORDS};
use crate::error::{Error, Result};
use crate::models::{class_weights, Architecture, Model, ModelInput};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent with a fixed step.
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub max_words: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 16,
            optimizer: Optimizer::Sgd,
            max_words: DEFAULT_MAX_WORDS,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::field(
                "hyperparameters.learning_rate",
                "must be a positive number",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::field(
                "hyperparameters.batch_size",
                "must be at least 1",
            ));
        }
        if self.max_words == 0 {
            return Err(Error::field(
                "hyperparameters.max_words",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub architecture: Architecture,
    pub seed: u64,
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    /// Validation macro-F1 after the last epoch.
    pub fn validation_macro_f1(&self) -> Option<f64> {
        self.history.last().and_then(|h| h.val_macro_f1)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.architecture.clone(), self.params.clone())
    }
}

struct Adam {
    m: ParamSet,
    v: ParamSet,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grad: &ParamSet, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let g = grad.get(name).expect("gradient keyed like params");
            let m = self.m.get_mut(name).expect("moment keyed like params");
            m.zip_mut_with(g, |m, &g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
            let v = self.v.get_mut(name).expect("moment keyed like params");
            v.zip_mut_with(g, |v, &g| {
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g
            });
            let m = self.m.get(name).expect("moment keyed like params");
            let v = self.v.get(name).expect("moment keyed like params");
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

/// Class indices of `examples` under `task`.
pub fn targets(examples: &[LabeledExample], task: Task) -> Vec<usize> {
    examples.iter().map(|e| task.target(e.label)).collect()
}

/// Argmax class of each input; a three-class model scored on the two-class
/// task compares p(for) + p(against) against p(no).
pub fn predict_classes(model: &Model, inputs: &[ModelInput], task: Task) -> Result<Vec<usize>> {
    let k = model.architecture().num_classes();
    if k < task.num_classes() {
        return Err(Error::invalid(format!(
            "a {k}-class model cannot be evaluated on the {}-class task",
            task.num_classes()
        )));
    }
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let d = model.predict(x).map_err(|e| Error::Example {
                index: i,
                source: Box::new(e),
            })?;
            Ok(if k == 3 && task == Task::TwoClass {
                let arg = d.get(0) + d.get(1);
                usize::from(d.get(2) > arg)
            } else {
                d.argmax()
            })
        })
        .collect()
}

fn validation_score(
    model: &Model,
    inputs: &[ModelInput],
    golds: &[usize],
    task: Task,
) -> Result<Option<f64>> {
    if inputs.is_empty() {
        return Ok(None);
    }
    let pred = predict_classes(model, inputs, task)?;
    macro_f1(&pred, golds, task.num_classes()).map(Some)
}

/// Mini-batch training from a seeded initialization. Batch order is
/// reshuffled every epoch from the same seed. Epoch 0 in the history is the
/// untrained model.
pub fn train(
    arch: &Architecture,
    featurizer: &Featurizer,
    split: &Split,
    task: Task,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<TrainRun> {
    if split.train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    hp.validate()?;
    if arch.num_classes() != task.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} classes but the task has {}",
            arch.num_classes(),
            task.num_classes()
        )));
    }
    let golds = targets(&split.train, task);
    let mut counts = vec![0; task.num_classes()];
    for &y in &golds {
        counts[y] += 1;
    }
    let weights = class_weights(&counts)?;
    let data: Vec<(ModelInput, usize)> = featurizer
        .encode_all(&split.train)?
        .into_iter()
        .zip(golds)
        .collect();
    let val_inputs = featurizer.encode_all(&split.val)?;
    let val_golds = targets(&split.val, task);

    let mut model = Model::init(arch.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = (hp.optimizer == Optimizer::Adam).then(|| Adam::new(model.params()));

    let record = |model: &Model, epoch: usize| -> Result<EpochRecord> {
        let train_loss = model.loss(&data, &weights)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1: validation_score(model, &val_inputs, &val_golds, task)?,
        })
    };
    let mut history = vec![record(&model, 0)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<(ModelInput, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grad) = model.loss_and_gradient(&batch, &weights)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            match adam.as_mut() {
                Some(a) => a.step(model.params_mut(), &grad, hp.learning_rate),
                None => model.params_mut().scaled_add(-hp.learning_rate, &grad),
            }
            if !model.params().is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        history.push(record(&model, epoch)?);
    }
    Ok(TrainRun {
        architecture: arch.clone(),
        seed,
        params: model.into_params(),
        history,
    })
}

/// Runs `trainer` for seeds `base_seed..base_seed + n` (concurrently) and
/// returns the run with the best validation macro-F1, ties to the lowest
/// seed, together with every run in seed order.
pub fn restart_select_with<F>(
    n: usize,
    base_seed: u64,
    trainer: F,
) -> Result<(TrainRun, Vec<TrainRun>)>
where
    F: Fn(u64) -> Result<TrainRun> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let runs: Vec<TrainRun> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            trainer(seed).map_err(|e| Error::Restart {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        let score = run.validation_macro_f1().unwrap_or(f64::NEG_INFINITY);
        let top = runs[best]
            .validation_macro_f1()
            .unwrap_or(f64::NEG_INFINITY);
        if score > top {
            best = i;
        }
    }
    Ok((runs[best].clone(), runs))
}

pub fn restart_select(
    arch: &Architecture,
    featurizer: &Featurizer,
    split: &Split,
    task: Task,
    hp: &Hyperparameters,
    n_restarts: usize,
    base_seed: u64,
) -> Result<(TrainRun, Vec<TrainRun>)> {
    restart_select_with(n_restarts, base_seed, |seed| {
        train(arch, featurizer, split, task, hp, seed)
    })
}

/// Forward pass over `examples` and a report under `task`.
pub fn evaluate(
    model: &Model,
    featurizer: &Featurizer,
    examples: &[LabeledExample],
    task: Task,
) -> Result<EvaluationReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let inputs = featurizer.encode_all(examples)?;
    let pred = predict_classes(model, &inputs, task)?;
    EvaluationReport::from_predictions(&pred, &targets(examples, task), task)
}
