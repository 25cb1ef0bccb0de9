//! Scoring backends.
//!
//! Every backend answers `log q(w | c)`; some also answer `log q(c)`. Natural
//! logarithms are used throughout. Words containing whitespace are scored as
//! a chain over their tokens, each conditioned on the context plus the
//! previously consumed tokens of the word.

use std::fmt;

use thiserror::Error;

pub mod ngram;
pub mod records;
pub mod toy;

pub use ngram::{NgramModel, NgramTrainer, Smoothing};
pub use records::{export_records, load_score_records, FileScorer, ScoreFile, ScoreRecord};
pub use toy::ToyLanguage;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("context has zero prefix probability")]
    ZeroPrefix,
    #[error("backend cannot score {0}")]
    CapabilityMissing(String),
    #[error("no score for word `{word}` in context {context_id} at step {step}, seed {seed}")]
    MissingTriple {
        word: String,
        context_id: String,
        step: u64,
        seed: u64,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A training snapshot: how much data the model had seen, and which run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CheckpointId {
    pub step: u64,
    pub seed: u64,
}

impl fmt::Display for CheckpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} seed {}", self.step, self.seed)
    }
}

/// Conditional word scoring. Implementations are immutable and may be
/// queried from several threads.
pub trait Scorer: Send + Sync {
    /// `log q(w | c)`, always ≤ 0.
    fn log_prob_word(&self, word: &str, context: &[String]) -> Result<f64, LmError>;

    fn scores_context_prob(&self) -> bool {
        false
    }

    /// `log q(c)` (or a proportional proxy, see the backend), always ≤ 0.
    fn log_prob_context(&self, _context: &[String]) -> Result<f64, LmError> {
        Err(LmError::CapabilityMissing("context probability".into()))
    }
}

/// Splits a word into the tokens it is chained over.
pub fn word_tokens(word: &str) -> Result<Vec<String>, LmError> {
    let toks: Vec<String> = word.split_whitespace().map(str::to_owned).collect();
    if toks.is_empty() {
        return Err(LmError::InvalidArgument("empty word".into()));
    }
    Ok(toks)
}

/// Ordered checkpoints of one training run.
#[derive(Debug, Clone)]
pub struct CheckpointSeries<S> {
    pub seed: u64,
    pub total_steps: u64,
    pub checkpoints: Vec<(u64, S)>,
}

impl<S> CheckpointSeries<S> {
    pub fn new(seed: u64, checkpoints: Vec<(u64, S)>) -> Result<Self, LmError> {
        validate_schedule(&checkpoints.iter().map(|(s, _)| *s).collect::<Vec<_>>())?;
        let total_steps = checkpoints.last().map(|(s, _)| *s).unwrap_or(0);
        Ok(CheckpointSeries {
            seed,
            total_steps,
            checkpoints,
        })
    }

    pub fn steps(&self) -> Vec<u64> {
        self.checkpoints.iter().map(|(s, _)| *s).collect()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

/// Schedules must be non-empty and strictly increasing.
pub fn validate_schedule(steps: &[u64]) -> Result<(), LmError> {
    if steps.is_empty() {
        return Err(LmError::InvalidArgument("checkpoint schedule is empty".into()));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LmError::InvalidArgument(
            "checkpoint schedule must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// A schedule of `n` checkpoints whose spacing grows geometrically, ending
/// at `total`. Steps are deduplicated, so fewer than `n` may be returned for
/// small totals.
pub fn geometric_schedule(total: u64, n: usize, first: u64) -> Vec<u64> {
    if n == 0 || total == 0 {
        return Vec::new();
    }
    let first = first.clamp(1, total) as f64;
    let mut steps: Vec<u64> = if n == 1 {
        vec![total]
    } else {
        let ratio = (total as f64 / first).powf(1.0 / (n - 1) as f64);
        (0..n).map(|i| (first * ratio.powi(i as i32)).round() as u64).collect()
    };
    *steps.last_mut().expect("non-empty") = total;
    steps.dedup();
    steps.retain(|&s| s >= 1 && s <= total);
    steps
}
