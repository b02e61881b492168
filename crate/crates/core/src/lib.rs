//! Trigger-aware named entity recognition.
//!
//! The crate covers two stages. The first trains an entity token classifier
//! and a small language model, then scores parse-derived phrase candidates
//! with sampling-and-occlusion to extract entity triggers. The second trains
//! a trigger interpolation network that mixes entity-masked and
//! trigger-masked encodings before a CRF tagger. Inference uses the raw
//! sentence only.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod extract;
pub mod lm;
pub mod neural;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod synthgen;
pub mod tin;
pub mod vocab;

pub use error::{Error, Result};
