//! Cross-lingual verdict classification with consistency regularization.
//!
//! A small bag-of-embeddings classifier is trained on claim/evidence pairs
//! in a source language and its (synthetic) translations, under three
//! scenarios: source only, pooled translations, and original/translation
//! pairs tied together by a prediction- or representation-level
//! consistency term. Calibration is measured with binned ECE.

pub mod calibration;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod probcore;
pub mod trainer;

pub use error::{Error, Result};
