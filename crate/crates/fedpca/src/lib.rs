//! Data-free evaluation of client contributions in federated learning.
//!
//! The server scores each client's uploaded model update purely from its
//! statistical agreement with peers' updates (pairwise correlated agreement),
//! without any test or training data, then uses the scores for robust
//! aggregation (Fed-PCA, weighted median) and for incentive auditing.

pub mod aggregate;
pub mod clients;
pub mod error;
pub mod experiment;
pub mod incentive;
pub mod learner;
pub mod quantize;
pub mod scoring;
pub mod seeding;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
