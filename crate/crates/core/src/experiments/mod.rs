//! Training protocol, evaluation and topic-dependent augmentation.

mod augment;
mod features;
mod metrics;
mod training;

pub use augment::{
    augment_test, augment_train, relabel_count, related_terms_registry, RelatedTermsRegistry,
    TERMS_PER_TOPIC,
};
pub use features::{Featurizer, TopicSource};
pub use metrics::{confusion_matrix, macro_f1, ClassMetrics, EvaluationReport, Task};
pub use training::{
    evaluate, predict_classes, restart_select, restart_select_with, targets, train, EpochRecord,
    Hyperparameters, Optimizer, TrainRun,
};
