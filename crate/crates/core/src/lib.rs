//! Distributional signatures of lexical knowledge in language models.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] ingests tokenized corpora, counts words and samples positive,
//!   negative and marginal contexts for target words.
//! * [`lm`] scores `log q(w | c)` and `log q(c)` over a series of checkpoints
//!   (incrementally trained n-gram models, score files produced by external
//!   neural models, and exact toy languages used as oracles).
//! * [`signatures`] turns scored context samples into the nine signature
//!   estimators (true / intrinsic / reference × positive / negative / all).
//! * [`trajectory`] smooths signature time series and extracts an age of
//!   acquisition with a Cauchy convergence criterion.
//! * [`wordbank`] reads child vocabulary norms and computes child AoA.
//! * [`analysis`] compares model and child AoA: Pearson / Spearman
//!   correlation, OLS with adjusted R², t-test p-values and VIF.
//! * [`synth`] generates the bundled Zipfian fixtures.

pub mod analysis;
pub mod corpus;
pub mod lm;
pub mod signatures;
pub mod synth;
pub mod trajectory;
pub mod wordbank;

pub use corpus::{ContextSample, Corpus, Polarity};
pub use signatures::{Family, SignatureKind};
