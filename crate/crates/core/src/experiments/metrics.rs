use serde::{Deserialize, Serialize};

use crate::corpus::{Label, SplitMetadata};
use crate::error::{Error, Result};

/// Label scheme a model is trained or evaluated under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    TwoClass,
    ThreeClass,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::TwoClass => 2,
            Task::ThreeClass => 3,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::TwoClass => &["Argument", "NoArgument"],
            Task::ThreeClass => &["Argument_for", "Argument_against", "NoArgument"],
        }
    }

    /// Class index of a gold label under this scheme.
    pub fn target(self, label: Label) -> usize {
        match self {
            Task::TwoClass => label.to_two_class().index(),
            Task::ThreeClass => label.index(),
        }
    }

    pub fn from_num_classes(k: usize) -> Option<Task> {
        match k {
            2 => Some(Task::TwoClass),
            3 => Some(Task::ThreeClass),
            _ => None,
        }
    }
}

fn check_inputs(predictions: &[usize], golds: &[usize], num_classes: usize) -> Result<()> {
    if predictions.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            got: predictions.len(),
        });
    }
    if golds.is_empty() {
        return Err(Error::Empty("no predictions to score"));
    }
    if num_classes == 0 {
        return Err(Error::Empty("class set"));
    }
    if let Some(c) = predictions.iter().chain(golds).find(|&&c| c >= num_classes) {
        return Err(Error::invalid(format!(
            "class {c} outside 0..{num_classes}"
        )));
    }
    Ok(())
}

/// `confusion[gold][predicted]` counts.
pub fn confusion_matrix(
    predictions: &[usize],
    golds: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    check_inputs(predictions, golds, num_classes)?;
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of class `c`; every undefined rate is 0.
fn class_scores(confusion: &[Vec<usize>], c: usize) -> (f64, f64, f64, usize) {
    let tp = confusion[c][c];
    let predicted: usize = confusion.iter().map(|row| row[c]).sum();
    let support: usize = confusion[c].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1, support)
}

fn macro_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let k = confusion.len();
    (0..k).map(|c| class_scores(confusion, c).2).sum::<f64>() / k as f64
}

/// Unweighted mean of per-class F1 over `0..num_classes`. A class absent
/// from both gold and predictions still counts, with F1 = 0.
pub fn macro_f1(predictions: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    Ok(macro_from_confusion(&confusion_matrix(
        predictions,
        golds,
        num_classes,
    )?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub task: Task,
    pub split: Option<SplitMetadata>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
}

impl EvaluationReport {
    pub fn from_predictions(predictions: &[usize], golds: &[usize], task: Task) -> Result<Self> {
        let confusion = confusion_matrix(predictions, golds, task.num_classes())?;
        let per_class = task
            .class_names()
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let (precision, recall, f1, support) = class_scores(&confusion, c);
                ClassMetrics {
                    class: name.to_string(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        Ok(Self {
            per_class,
            macro_f1: macro_from_confusion(&confusion),
            confusion,
            task,
            split: None,
            config_digest: None,
            seed: None,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}
