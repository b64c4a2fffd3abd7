//! Unsupervised word segmentation of phoneme sequences supported by
//! sentence-aligned translations.
//!
//! The crate provides a Dirichlet-process Bayesian segmenter ([`bayes`]),
//! an attention encoder-decoder whose soft alignments induce segmentations
//! ([`neural`], [`align`]), the hybrid pipeline that feeds Bayesian
//! boundaries to the neural model as removable markers ([`corpus`]),
//! evaluation ([`metrics`]) and an experiment runner ([`harness`]).

pub mod align;
pub mod bayes;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod synth;

pub use error::{Error, Result};
