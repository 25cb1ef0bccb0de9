//! Incrementally trained n-gram models.
//!
//! Training streams the corpus' prediction events (every token of every
//! utterance plus its end-of-utterance marker) in a seed-shuffled order. A
//! "training step" is one consumed event; after each scheduled step count a
//! frozen copy of the count tables becomes a checkpoint scorer.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{validate_schedule, word_tokens, CheckpointSeries, LmError, Scorer};
use crate::corpus::Corpus;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    /// `(c(h,w) + k) / (c(h) + kV)` on the highest-order history only.
    AddK { k: f64 },
    /// Add-k at every order, each level's prior being the level below it:
    /// `(c(h,w) + kV·P(w|h')) / (c(h) + kV)`, bottoming out at uniform.
    InterpolatedAddK { k: f64 },
    /// Interpolated Kneser-Ney with a single absolute discount.
    KneserNey { discount: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::InterpolatedAddK { k: 0.1 }
    }
}

impl Smoothing {
    fn validate(&self) -> Result<(), LmError> {
        match *self {
            Smoothing::AddK { k } | Smoothing::InterpolatedAddK { k } if !(k >= 0.0 && k.is_finite()) => Err(
                LmError::InvalidArgument(format!("add-k constant {k} must be finite and ≥ 0")),
            ),
            Smoothing::KneserNey { discount } if !(discount > 0.0 && discount < 1.0) => Err(LmError::InvalidArgument(
                format!("discount {discount} must lie in (0, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

/// Token ↔ id map. Ids `0..n` are corpus tokens, followed by end-of-utterance,
/// unknown, and (history only) beginning-of-utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    n_words: u32,
}

impl Vocab {
    fn from_corpus(corpus: &Corpus) -> Self {
        let ids: HashMap<String, u32> = corpus
            .inventory()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let n_words = ids.len() as u32;
        Vocab { ids, n_words }
    }

    pub fn eos(&self) -> u32 {
        self.n_words
    }

    pub fn unk(&self) -> u32 {
        self.n_words + 1
    }

    pub fn bos(&self) -> u32 {
        self.n_words + 2
    }

    /// Number of predictable symbols: corpus tokens, end marker and unknown.
    pub fn size(&self) -> usize {
        self.n_words as usize + 2
    }

    pub fn id(&self, token: &str) -> u32 {
        match self.ids.get(token) {
            Some(&id) => id,
            None if token == BOS_TOKEN => self.bos(),
            None if token == EOS_TOKEN => self.eos(),
            None => self.unk(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct HistStats {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Count tables indexed by history length `0..order`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts {
    tables: Vec<HashMap<Vec<u32>, HistStats>>,
}

impl NgramCounts {
    fn new(order: usize) -> Self {
        NgramCounts {
            tables: vec![HashMap::new(); order],
        }
    }

    fn order(&self) -> usize {
        self.tables.len()
    }

    /// `history` holds exactly `order - 1` ids.
    fn add(&mut self, history: &[u32], target: u32) {
        let order = self.order();
        for (hl, table) in self.tables.iter_mut().enumerate() {
            let key = history[order - 1 - hl..].to_vec();
            let st = table.entry(key).or_default();
            st.total += 1;
            *st.next.entry(target).or_insert(0) += 1;
        }
    }

    fn lookup(&self, hl: usize, history: &[u32]) -> Option<&HistStats> {
        let order = self.order();
        self.tables[hl].get(&history[order - 1 - hl..])
    }

    /// Continuation counts: for each lower-order (history, word), the number
    /// of distinct one-token left extensions seen at the next order up.
    fn continuation(&self) -> Vec<HashMap<Vec<u32>, HistStats>> {
        let order = self.order();
        let mut cont: Vec<HashMap<Vec<u32>, HistStats>> = vec![HashMap::new(); order.saturating_sub(1)];
        for hl in 1..order {
            for (hist, st) in &self.tables[hl] {
                let key = hist[1..].to_vec();
                let entry = cont[hl - 1].entry(key).or_default();
                for &w in st.next.keys() {
                    entry.total += 1;
                    *entry.next.entry(w).or_insert(0) += 1;
                }
            }
        }
        cont
    }
}

/// Corpus positions `(utterance, index)` in the order training consumes
/// them. Index `len` of an utterance is its end-of-utterance event.
pub fn shuffled_positions(corpus: &Corpus, seed: u64) -> Vec<(usize, usize)> {
    let mut positions: Vec<(usize, usize)> = corpus
        .utterances()
        .iter()
        .enumerate()
        .flat_map(|(u, utt)| (0..=utt.len()).map(move |i| (u, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positions.shuffle(&mut rng);
    positions
}

/// Holds an encoded corpus and emits checkpoint series from it.
#[derive(Debug, Clone)]
pub struct NgramTrainer {
    vocab: Arc<Vocab>,
    order: usize,
    smoothing: Smoothing,
    encoded: Vec<Vec<u32>>,
    corpus: Corpus,
}

impl NgramTrainer {
    pub fn new(corpus: &Corpus, order: usize, smoothing: Smoothing) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::InvalidArgument("n-gram order must be at least 1".into()));
        }
        smoothing.validate()?;
        if corpus.utterances().is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let vocab = Arc::new(Vocab::from_corpus(corpus));
        let encoded = corpus
            .utterances()
            .iter()
            .map(|u| u.iter().map(|t| vocab.id(t)).collect())
            .collect();
        Ok(NgramTrainer {
            vocab,
            order,
            smoothing,
            encoded,
            corpus: corpus.clone(),
        })
    }

    /// Number of prediction events in one pass over the corpus.
    pub fn total_positions(&self) -> u64 {
        self.encoded.iter().map(|u| u.len() as u64 + 1).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn history_at(&self, u: usize, i: usize) -> Vec<u32> {
        let utt = &self.encoded[u];
        let n = self.order - 1;
        let mut h = vec![self.vocab.bos(); n];
        let start = i.saturating_sub(n);
        let got = &utt[start..i];
        h[n - got.len()..].copy_from_slice(got);
        h
    }

    fn target_at(&self, u: usize, i: usize) -> u32 {
        self.encoded[u].get(i).copied().unwrap_or_else(|| self.vocab.eos())
    }

    /// Trains on the seed-shuffled stream, freezing a checkpoint after each
    /// scheduled number of consumed events.
    pub fn train(&self, schedule: &[u64], seed: u64) -> Result<CheckpointSeries<NgramModel>, LmError> {
        let mut checkpoints = Vec::with_capacity(schedule.len());
        self.for_each_checkpoint(schedule, seed, |step, model| {
            checkpoints.push((step, model.clone()));
            Ok::<_, LmError>(())
        })?;
        CheckpointSeries::new(seed, checkpoints)
    }

    /// Streaming form of [`NgramTrainer::train`]: `visit` sees each
    /// checkpoint in turn and only one model is alive at a time.
    pub fn for_each_checkpoint<E, F>(&self, schedule: &[u64], seed: u64, mut visit: F) -> Result<(), E>
    where
        E: From<LmError>,
        F: FnMut(u64, &NgramModel) -> Result<(), E>,
    {
        validate_schedule(schedule)?;
        let total = self.total_positions();
        if schedule[0] == 0 || *schedule.last().expect("validated") > total {
            return Err(
                LmError::InvalidArgument(format!("schedule steps must lie in 1..={total} (corpus positions)")).into(),
            );
        }
        let positions = shuffled_positions(&self.corpus, seed);
        let mut model = self.freeze(NgramCounts::new(self.order), 0);
        for &step in schedule {
            while model.consumed < step {
                let (u, i) = positions[model.consumed as usize];
                model.counts.add(&self.history_at(u, i), self.target_at(u, i));
                model.consumed += 1;
            }
            if model.continuation.is_some() {
                model.continuation = Some(model.counts.continuation());
            }
            visit(step, &model)?;
        }
        Ok(())
    }

    /// Counts every event of the corpus in natural order.
    pub fn train_batch(&self) -> NgramModel {
        let mut counts = NgramCounts::new(self.order);
        let mut consumed = 0;
        for (u, utt) in self.encoded.iter().enumerate() {
            for i in 0..=utt.len() {
                counts.add(&self.history_at(u, i), self.target_at(u, i));
                consumed += 1;
            }
        }
        self.freeze(counts, consumed)
    }

    fn freeze(&self, counts: NgramCounts, consumed: u64) -> NgramModel {
        let continuation = match self.smoothing {
            Smoothing::KneserNey { .. } => Some(counts.continuation()),
            _ => None,
        };
        NgramModel {
            vocab: Arc::clone(&self.vocab),
            order: self.order,
            smoothing: self.smoothing,
            counts,
            continuation,
            consumed,
        }
    }
}

/// Convenience wrapper: build a trainer and run one schedule.
pub fn train_ngram(
    corpus: &Corpus,
    order: usize,
    smoothing: Smoothing,
    schedule: &[u64],
    seed: u64,
) -> Result<CheckpointSeries<NgramModel>, LmError> {
    NgramTrainer::new(corpus, order, smoothing)?.train(schedule, seed)
}

/// A frozen n-gram checkpoint.
#[derive(Debug, Clone)]
pub struct NgramModel {
    vocab: Arc<Vocab>,
    order: usize,
    smoothing: Smoothing,
    counts: NgramCounts,
    continuation: Option<Vec<HashMap<Vec<u32>, HistStats>>>,
    consumed: u64,
}

impl PartialEq for NgramModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.smoothing == other.smoothing
            && self.consumed == other.consumed
            && self.vocab == other.vocab
            && self.counts == other.counts
    }
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn counts(&self) -> &NgramCounts {
        &self.counts
    }

    /// Raw count of `target` after `history` (most recent token last; its
    /// length selects the order). `<s>` and `</s>` name the boundary markers.
    pub fn ngram_count(&self, history: &[&str], target: &str) -> u64 {
        if history.len() >= self.order {
            return 0;
        }
        let ids: Vec<u32> = history.iter().map(|t| self.vocab.id(t)).collect();
        self.counts.tables[history.len()]
            .get(&ids)
            .and_then(|st| st.next.get(&self.vocab.id(target)))
            .copied()
            .unwrap_or(0)
    }

    fn padded_history(&self, context: &[u32]) -> Vec<u32> {
        let n = self.order - 1;
        let mut h = vec![self.vocab.bos(); n];
        let got = &context[context.len().saturating_sub(n)..];
        h[n - got.len()..].copy_from_slice(got);
        h
    }

    /// `P(w | h)` where `h` holds `order - 1` ids.
    fn prob(&self, h: &[u32], w: u32) -> f64 {
        let v = self.vocab.size() as f64;
        let mut p = 1.0 / v;
        match self.smoothing {
            Smoothing::AddK { k } | Smoothing::InterpolatedAddK { k } => {
                let lowest = match self.smoothing {
                    Smoothing::AddK { .. } => self.order - 1,
                    _ => 0,
                };
                for hl in lowest..self.order {
                    let (c_hw, c_h) = self
                        .counts
                        .lookup(hl, h)
                        .map(|st| (st.next.get(&w).copied().unwrap_or(0) as f64, st.total as f64))
                        .unwrap_or((0.0, 0.0));
                    let denom = c_h + k * v;
                    if denom > 0.0 {
                        p = (c_hw + k * v * p) / denom;
                    }
                }
            }
            Smoothing::KneserNey { discount } => {
                let cont = self.continuation.as_ref().expect("continuation counts built at freeze");
                for hl in 0..self.order {
                    let st = if hl == self.order - 1 {
                        self.counts.lookup(hl, h)
                    } else {
                        cont[hl].get(&h[self.order - 1 - hl..])
                    };
                    if let Some(st) = st.filter(|st| st.total > 0) {
                        let c_h = st.total as f64;
                        let c_hw = st.next.get(&w).copied().unwrap_or(0) as f64;
                        let types = st.next.len() as f64;
                        p = (c_hw - discount).max(0.0) / c_h + discount * types / c_h * p;
                    }
                }
            }
        }
        p
    }

    /// Conditional probability of one token after a token context.
    pub fn token_prob(&self, token: &str, context: &[String]) -> f64 {
        let ids: Vec<u32> = context.iter().map(|t| self.vocab.id(t)).collect();
        self.prob(&self.padded_history(&ids), self.vocab.id(token))
    }

    fn chain(&self, context: &mut Vec<u32>, tokens: &[String]) -> f64 {
        let mut total = 0.0;
        for tok in tokens {
            let id = self.vocab.id(tok);
            total += self.prob(&self.padded_history(context), id).ln();
            context.push(id);
        }
        total
    }
}

impl Scorer for NgramModel {
    fn log_prob_word(&self, word: &str, context: &[String]) -> Result<f64, LmError> {
        let toks = word_tokens(word)?;
        let mut ids: Vec<u32> = context.iter().map(|t| self.vocab.id(t)).collect();
        Ok(self.chain(&mut ids, &toks).min(0.0))
    }

    fn scores_context_prob(&self) -> bool {
        true
    }

    /// Chained token probability of the context from the utterance start.
    /// Not normalized over contexts; intrinsic weights only need it up to a
    /// common factor.
    fn log_prob_context(&self, context: &[String]) -> Result<f64, LmError> {
        let mut ids = Vec::with_capacity(context.len());
        Ok(self.chain(&mut ids, context).min(0.0))
    }
}
