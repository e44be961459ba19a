//! Disagreement ranking for word-in-context judgments.
//!
//! Pipeline: build mean pairwise disagreement labels from ordinal judgments
//! ([`dataset`]), look up sentence embeddings for both contexts
//! ([`embedding_store`]), train a BatchNorm/dropout regression network on the
//! concatenated pair ([`nn`], [`optim`], [`trainer`]) and score the predicted
//! ranking with Spearman's rho ([`metrics`]).

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod embedding_store;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod tsv;

pub use error::{Error, Result};
