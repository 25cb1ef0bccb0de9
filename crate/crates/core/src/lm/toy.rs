//! Toy languages: explicit probability tables over short strings.
//!
//! Because the support is finite, every quantity built from prefix
//! probabilities can be computed exactly by enumeration, which makes these
//! languages the oracle for all estimators.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{word_tokens, LmError, Scorer};

pub const MAX_ALPHABET: usize = 6;
pub const MAX_LEN: usize = 6;
const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ToyLanguage {
    alphabet: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
    table: BTreeMap<Vec<usize>, f64>,
    prefix: HashMap<Vec<usize>, f64>,
    normalizer: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToyStringJson {
    pub tokens: Vec<String>,
    pub prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToyLanguageJson {
    pub alphabet: Vec<String>,
    pub strings: Vec<ToyStringJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> LmError {
    LmError::InvalidArgument(msg.into())
}

impl ToyLanguage {
    pub fn new(alphabet: Vec<String>, max_len: usize, strings: Vec<(Vec<String>, f64)>) -> Result<Self, LmError> {
        if alphabet.is_empty() || alphabet.len() > MAX_ALPHABET {
            return Err(invalid(format!("alphabet must hold 1..={MAX_ALPHABET} symbols")));
        }
        if max_len > MAX_LEN {
            return Err(invalid(format!("maximum length is {MAX_LEN}")));
        }
        let index: HashMap<String, usize> = alphabet.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if index.len() != alphabet.len() {
            return Err(invalid("duplicate alphabet symbol"));
        }
        let mut table = BTreeMap::new();
        let mut total = 0.0;
        for (tokens, prob) in strings {
            if !(prob >= 0.0 && prob.is_finite()) {
                return Err(invalid(format!(
                    "probability {prob} is not a finite nonnegative number"
                )));
            }
            if tokens.len() > max_len {
                return Err(invalid(format!("string {tokens:?} longer than {max_len}")));
            }
            let ids = tokens
                .iter()
                .map(|t| {
                    index
                        .get(t)
                        .copied()
                        .ok_or_else(|| invalid(format!("symbol `{t}` not in alphabet")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if table.insert(ids, prob).is_some() {
                return Err(invalid(format!("duplicate string {tokens:?}")));
            }
            total += prob;
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        let mut prefix: HashMap<Vec<usize>, f64> = HashMap::new();
        for (ids, &p) in &table {
            for k in 0..=ids.len() {
                *prefix.entry(ids[..k].to_vec()).or_insert(0.0) += p;
            }
        }
        let mut lang = ToyLanguage {
            alphabet,
            index,
            max_len,
            table,
            prefix,
            normalizer: 0.0,
        };
        lang.normalizer = lang.all_context_ids().iter().map(|c| lang.prefix_ids(c)).sum();
        Ok(lang)
    }

    /// Builds a language over every string of length ≤ `max_len` with
    /// probability proportional to `weight(string)`.
    pub fn from_weights(alphabet: &[&str], max_len: usize, weight: impl Fn(&[usize]) -> f64) -> Result<Self, LmError> {
        let alphabet: Vec<String> = alphabet.iter().map(|s| s.to_string()).collect();
        let strings = enumerate_ids(alphabet.len(), max_len);
        let weights: Vec<f64> = strings.iter().map(|s| weight(s)).collect();
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        let entries = strings
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, &w)| (s.iter().map(|&i| alphabet[i].clone()).collect(), w / total))
            .collect();
        ToyLanguage::new(alphabet, max_len, entries)
    }

    pub fn from_json(json: ToyLanguageJson) -> Result<Self, LmError> {
        let longest = json.strings.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
        let max_len = json.max_len.unwrap_or(longest);
        let strings = json.strings.into_iter().map(|s| (s.tokens, s.prob)).collect();
        ToyLanguage::new(json.alphabet, max_len, strings)
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path)?;
        let json: ToyLanguageJson = serde_json::from_str(&text).map_err(|e| LmError::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        ToyLanguage::from_json(json)
    }

    pub fn to_json(&self) -> ToyLanguageJson {
        ToyLanguageJson {
            alphabet: self.alphabet.clone(),
            strings: self
                .table
                .iter()
                .map(|(ids, &prob)| ToyStringJson {
                    tokens: self.symbols(ids),
                    prob,
                })
                .collect(),
            max_len: Some(self.max_len),
        }
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Probability of one complete string.
    pub fn string_prob(&self, y: &[String]) -> f64 {
        self.ids(y).and_then(|ids| self.table.get(&ids).copied()).unwrap_or(0.0)
    }

    fn ids(&self, y: &[String]) -> Option<Vec<usize>> {
        y.iter().map(|t| self.index.get(t).copied()).collect()
    }

    fn symbols(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.alphabet[i].clone()).collect()
    }

    fn prefix_ids(&self, ids: &[usize]) -> f64 {
        self.prefix.get(ids).copied().unwrap_or(0.0)
    }

    /// Total mass of strings having `y` as a prefix.
    pub fn prefix_prob(&self, y: &[String]) -> f64 {
        self.ids(y).map(|ids| self.prefix_ids(&ids)).unwrap_or(0.0)
    }

    /// `prefix(c·w) / prefix(c)` in probability space.
    pub fn word_prob(&self, word: &[String], context: &[String]) -> Result<f64, LmError> {
        let pc = self.prefix_prob(context);
        if pc <= 0.0 {
            return Err(LmError::ZeroPrefix);
        }
        let mut cw = context.to_vec();
        cw.extend_from_slice(word);
        Ok(self.prefix_prob(&cw) / pc)
    }

    /// Probability that the string ends right after `context`.
    pub fn end_prob(&self, context: &[String]) -> Result<f64, LmError> {
        let pc = self.prefix_prob(context);
        if pc <= 0.0 {
            return Err(LmError::ZeroPrefix);
        }
        Ok(self.string_prob(context) / pc)
    }

    /// Σ prefix(c) over all contexts of length ≤ L (= expected length + 1).
    pub fn context_normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Normalized unconditional context probability `p(c)`.
    pub fn context_prob(&self, context: &[String]) -> f64 {
        self.prefix_prob(context) / self.normalizer
    }

    fn all_context_ids(&self) -> Vec<Vec<usize>> {
        enumerate_ids(self.alphabet.len(), self.max_len)
    }

    /// Every string over the alphabet of length ≤ L, shortest first.
    pub fn all_contexts(&self) -> Vec<Vec<String>> {
        self.all_context_ids().iter().map(|ids| self.symbols(ids)).collect()
    }
}

/// All index sequences of length 0..=max_len, by length then lexicographic.
pub fn enumerate_ids(alphabet_len: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet_len);
        for s in &frontier {
            for a in 0..alphabet_len {
                let mut t: Vec<usize> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl Scorer for ToyLanguage {
    fn log_prob_word(&self, word: &str, context: &[String]) -> Result<f64, LmError> {
        let w = word_tokens(word)?;
        Ok(self.word_prob(&w, context)?.ln())
    }

    fn scores_context_prob(&self) -> bool {
        true
    }

    /// Exactly normalized: `log(prefix(c) / Σ_c' prefix(c'))`.
    fn log_prob_context(&self, context: &[String]) -> Result<f64, LmError> {
        Ok(self.context_prob(context).ln())
    }
}
