//! Toolkit for generating synthetic source sentences for back-translation and studying how
//! the generation method affects the resulting training data.
//!
//! The pipeline: [`corpus`] preparation and joint BPE, a small conditional [`model`]
//! (IBM Model 1 lexical table mixed with a target-side Kneser–Ney [`lm`]), the generation
//! methods in [`decode`] and [`noise`], dataset construction in [`augment`], and scoring and
//! diagnostics in [`eval`]. [`experiment`] wires these into reproducible runs and sweeps;
//! [`toy`] generates a synthetic language pair to run them on.

pub mod augment;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod error;
pub mod experiment;
pub mod lm;
pub mod model;
pub mod noise;
pub mod rng;
pub mod toy;
pub mod textfmt;
pub mod vocab;

pub use corpus::{Corpus, Granularity, MonoCorpus, ParallelCorpus, Sentence, SentencePair};
pub use error::{Error, Result};
pub use vocab::{TokenId, Vocabulary};
