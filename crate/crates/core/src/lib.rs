//! Data filtering for dialogue corpora: attribute scoring, weighted
//! filtering, Bayesian weight search and a small conditional response model.

pub mod attributes;
pub mod bayesopt;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalmetrics;
pub mod measure;
pub mod ncm;
pub mod pipeline;
pub mod seqscore;
pub mod synthgen;
mod util;

pub use error::{Error, Result};
