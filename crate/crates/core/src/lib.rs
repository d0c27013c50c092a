//! Topic-aware sentential argument mining.
//!
//! A sentence is classified as a pro argument, a contra argument or a
//! non-argument *with respect to a query topic*. The crate provides:
//!
//! * [`corpus`]: TSV ingestion, label views, in-topic and cross-topic splits;
//! * [`embeddings`]: word vectors with nearest-neighbour search;
//! * [`kg`]: a triple store, TransE entity embeddings and topic → entity mapping;
//! * [`models`]: a dual-BiLSTM classifier and a segment-pair transformer encoder,
//!   both trained with a class-weighted cross-entropy;
//! * [`experiments`]: training with restarts, macro-F1 evaluation and
//!   topic-dependent data augmentation;
//! * [`checkpoint`], [`config`] and [`pipeline`]: the file formats and the
//!   commands behind the `topicarg` binary.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod experiments;
pub mod kg;
pub mod models;
pub mod params;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result};
