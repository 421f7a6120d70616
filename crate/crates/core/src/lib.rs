//! Stock movement prediction from social-media sentiment.
//!
//! The pipeline cleans StockTwits-style messages, scores them with a chat
//! model (or an offline stand-in), aggregates daily features per company and
//! fits a pooled logistic regression evaluated against a naive baseline.

pub mod error;
pub mod evalstat;
pub mod featurize;
pub mod glm;
pub mod ingest;
pub mod pipeline;
pub mod promptkit;
pub mod respparse;
pub mod scorer;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
