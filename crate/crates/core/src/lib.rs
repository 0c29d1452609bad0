//! Feature-aware masking and masked-LM infilling for synthetic clinical
//! letters, with the evaluation battery used to judge them.

pub mod chunker;
pub mod corpus;
pub mod error;
pub mod featurizer;
pub mod generator;
pub mod maskplanner;
pub mod metrics;
pub mod postprocessor;
mod hashing;
pub mod modelgate;
pub mod nerharness;
pub mod text;

pub use error::{Error, Result};
pub use hashing::stable_hash;
