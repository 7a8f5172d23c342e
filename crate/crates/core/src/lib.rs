//! Attribute-modulated deep metric learning at desk scale.
//!
//! A dense two-headed network learns attribute probabilities and an embedding
//! jointly. Pairs of embeddings are scored with cosine similarity and trained
//! with a binomial deviance loss whose margin is shifted by the cosine
//! similarity of the two samples' attribute vectors.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod rng;
pub mod sampling;
pub mod similarity;
pub mod trainer;

pub use error::{Error, Result};
