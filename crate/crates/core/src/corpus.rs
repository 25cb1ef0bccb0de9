//! Corpus ingestion, word statistics and context sampling.
//!
//! A context is the token sequence preceding a position inside one utterance,
//! truncated to its last `max_context_len` tokens. Contexts never cross
//! utterance boundaries. Samples are drawn uniformly over distinct context
//! *types* without replacement; the corpus multiplicity of each sampled type
//! is kept in [`ContextEntry::count`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default truncation length for sampled contexts, in tokens.
pub const DEFAULT_MAX_CONTEXT_LEN: usize = 64;

pub type Context = Vec<String>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("word `{0}` does not occur in the corpus")]
    WordAbsent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stable identifier of a token sequence: the first 16 hex digits of the
/// SHA-256 of the tokens joined by U+001F.
pub fn context_id(tokens: &[String]) -> String {
    let mut hasher = Sha256::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(tok.as_bytes());
    }
    // Distinguish the empty context from a context holding one empty token.
    hasher.update([0x1e, tokens.len() as u8]);
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

/// A tokenized corpus: a list of non-empty utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    source_id: String,
    utterances: Vec<Vec<String>>,
    inventory: BTreeSet<String>,
}

#[derive(Deserialize)]
struct JsonlUtterance {
    tokens: Vec<String>,
}

impl Corpus {
    /// Builds a corpus, silently dropping empty utterances.
    pub fn new(source_id: impl Into<String>, utterances: Vec<Vec<String>>) -> Self {
        let utterances: Vec<Vec<String>> = utterances.into_iter().filter(|u| !u.is_empty()).collect();
        let inventory = utterances.iter().flatten().cloned().collect();
        Corpus {
            source_id: source_id.into(),
            utterances,
            inventory,
        }
    }

    /// One utterance per line, whitespace tokenized. Blank lines are skipped.
    pub fn from_text(source_id: impl Into<String>, text: &str) -> Self {
        let utterances = text
            .lines()
            .map(|line| line.split_whitespace().map(str::to_owned).collect())
            .collect();
        Corpus::new(source_id, utterances)
    }

    /// Pre-tokenized JSONL, one object with a `tokens` array per line.
    pub fn from_jsonl<R: BufRead>(source_id: impl Into<String>, reader: R) -> Result<Self, CorpusError> {
        let mut utterances = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let utt: JsonlUtterance = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            utterances.push(utt.tokens);
        }
        Ok(Corpus::new(source_id, utterances))
    }

    /// Loads a corpus from disk; `.jsonl` files are read as pre-tokenized.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let source_id = path.display().to_string();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let file = std::fs::File::open(path)?;
            Corpus::from_jsonl(source_id, std::io::BufReader::new(file))
        } else {
            let text = std::fs::read_to_string(path)?;
            Ok(Corpus::from_text(source_id, &text))
        }
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn utterances(&self) -> &[Vec<String>] {
        &self.utterances
    }

    pub fn inventory(&self) -> &BTreeSet<String> {
        &self.inventory
    }

    pub fn num_tokens(&self) -> usize {
        self.utterances.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.inventory.contains(word)
    }

    /// The truncated context at every token boundary, utterance ends included.
    fn boundary_contexts(&self, max_context_len: usize) -> impl Iterator<Item = &[String]> + '_ {
        self.utterances
            .iter()
            .flat_map(move |utt| (0..=utt.len()).map(move |i| &utt[i.saturating_sub(max_context_len)..i]))
    }
}

/// Token counts over the whole corpus.
pub fn count_frequencies(corpus: &Corpus) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for tok in corpus.utterances.iter().flatten() {
        *counts.entry(tok.clone()).or_insert(0) += 1;
    }
    counts
}

/// Which context distribution a sample approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    /// Unconditional contexts; labelled `all` in signature outputs.
    #[serde(alias = "all")]
    Marginal,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Marginal];

    pub fn as_sample_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Marginal => "marginal",
        }
    }

    pub fn as_signature_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Marginal => "all",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
            Polarity::Marginal => "±",
        }
    }
}

/// Serde `serialize_with` helper writing the signature label (`all` for
/// marginal) instead of the sample label.
pub fn serialize_signature_polarity<S: serde::Serializer>(p: &Polarity, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(p.as_signature_str())
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_signature_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" | "+" => Ok(Polarity::Positive),
            "negative" | "-" => Ok(Polarity::Negative),
            "marginal" | "all" | "±" => Ok(Polarity::Marginal),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub tokens: Context,
    /// Corpus multiplicity of this context type (≥ 1).
    pub count: u64,
}

/// A bag of distinct contexts for one word (or for no word, when marginal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSample {
    pub word: Option<String>,
    pub polarity: Polarity,
    pub contexts: Vec<ContextEntry>,
    pub capacity: usize,
    /// Set when fewer than `capacity` context types existed.
    pub insufficient_types: bool,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    word: Option<String>,
    polarity: Polarity,
    context: Context,
    count: u64,
}

impl ContextSample {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// One JSON object per context: `word`, `polarity`, `context`, `count`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for entry in &self.contexts {
            let line = SampleLine {
                word: self.word.clone(),
                polarity: self.polarity,
                context: entry.tokens.clone(),
                count: entry.count,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a sample written by [`ContextSample::write_jsonl`]. Lines
    /// starting with `#` are ignored. `capacity` is the number of lines read.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut word = None;
        let mut polarity = None;
        let mut contexts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: SampleLine = serde_json::from_str(trimmed).map_err(|e| CorpusError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            match polarity {
                None => {
                    polarity = Some(rec.polarity);
                    word = rec.word.clone();
                }
                Some(p) if p != rec.polarity || word != rec.word => {
                    return Err(CorpusError::Format {
                        line: i + 1,
                        message: "mixed word or polarity within one sample file".into(),
                    })
                }
                _ => {}
            }
            if rec.count == 0 {
                return Err(CorpusError::Format {
                    line: i + 1,
                    message: "context count must be at least 1".into(),
                });
            }
            contexts.push(ContextEntry {
                tokens: rec.context,
                count: rec.count,
            });
        }
        let polarity = polarity.unwrap_or(Polarity::Marginal);
        Ok(ContextSample {
            word,
            polarity,
            capacity: contexts.len(),
            insufficient_types: false,
            contexts,
        })
    }
}

fn check_sampling_args(m: usize, max_context_len: usize) -> Result<(), CorpusError> {
    if m == 0 {
        return Err(CorpusError::InvalidArgument("sample size m must be at least 1".into()));
    }
    if max_context_len == 0 {
        return Err(CorpusError::InvalidArgument(
            "max_context_len must be at least 1".into(),
        ));
    }
    Ok(())
}

fn draw_types(candidates: BTreeMap<Context, u64>, m: usize, rng_seed: u64) -> (Vec<ContextEntry>, bool) {
    let insufficient = candidates.len() < m;
    let mut all: Vec<ContextEntry> = candidates
        .into_iter()
        .map(|(tokens, count)| ContextEntry { tokens, count })
        .collect();
    if all.len() <= m {
        return (all, insufficient);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = index::sample(&mut rng, all.len(), m).into_vec();
    picked.sort_unstable();
    let mut out = Vec::with_capacity(m);
    // Indices are ascending, so walk once and take by swapping out.
    for idx in picked {
        out.push(std::mem::take(&mut all[idx]));
    }
    (out, insufficient)
}

/// Distinct positive context types of `word` with their multiplicities.
pub fn positive_context_types(corpus: &Corpus, word: &str, max_context_len: usize) -> BTreeMap<Context, u64> {
    let mut types = BTreeMap::new();
    for utt in &corpus.utterances {
        for (i, tok) in utt.iter().enumerate() {
            if tok == word {
                let ctx = utt[i.saturating_sub(max_context_len)..i].to_vec();
                *types.entry(ctx).or_insert(0) += 1;
            }
        }
    }
    types
}

/// Whether a follower token disqualifies a position as a negative context.
fn blocks_negative(follower: &str, word: &str) -> bool {
    follower.starts_with(word)
}

pub fn sample_positive_contexts(
    corpus: &Corpus,
    word: &str,
    m: usize,
    max_context_len: usize,
    rng_seed: u64,
) -> Result<ContextSample, CorpusError> {
    check_sampling_args(m, max_context_len)?;
    let types = positive_context_types(corpus, word, max_context_len);
    if types.is_empty() {
        return Err(CorpusError::WordAbsent(word.to_owned()));
    }
    let (contexts, insufficient_types) = draw_types(types, m, rng_seed);
    Ok(ContextSample {
        word: Some(word.to_owned()),
        polarity: Polarity::Positive,
        contexts,
        capacity: m,
        insufficient_types,
    })
}

/// Contexts followed by a token that neither equals `word` nor has it as a
/// prefix. End-of-utterance positions have no follower and are not counted.
pub fn sample_negative_contexts(
    corpus: &Corpus,
    word: &str,
    m: usize,
    max_context_len: usize,
    rng_seed: u64,
) -> Result<ContextSample, CorpusError> {
    check_sampling_args(m, max_context_len)?;
    let mut types = BTreeMap::new();
    for utt in &corpus.utterances {
        for (i, tok) in utt.iter().enumerate() {
            if !blocks_negative(tok, word) {
                let ctx = utt[i.saturating_sub(max_context_len)..i].to_vec();
                *types.entry(ctx).or_insert(0) += 1;
            }
        }
    }
    let (contexts, insufficient_types) = draw_types(types, m, rng_seed);
    Ok(ContextSample {
        word: Some(word.to_owned()),
        polarity: Polarity::Negative,
        contexts,
        capacity: m,
        insufficient_types,
    })
}

/// Contexts drawn over every token boundary, including the empty prefix and
/// the complete utterance.
pub fn sample_marginal_contexts(
    corpus: &Corpus,
    m: usize,
    max_context_len: usize,
    rng_seed: u64,
) -> Result<ContextSample, CorpusError> {
    check_sampling_args(m, max_context_len)?;
    let mut types = BTreeMap::new();
    for ctx in corpus.boundary_contexts(max_context_len) {
        *types.entry(ctx.to_vec()).or_insert(0) += 1;
    }
    let (contexts, insufficient_types) = draw_types(types, m, rng_seed);
    Ok(ContextSample {
        word: None,
        polarity: Polarity::Marginal,
        contexts,
        capacity: m,
        insufficient_types,
    })
}

/// Position counts used to check sampling coverage: positions followed by the
/// word, positions followed by a token the word is a proper prefix of, and
/// the remaining (negative) positions. The three always sum to the corpus
/// token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionCensus {
    pub positive: u64,
    pub prefix_blocked: u64,
    pub negative: u64,
}

pub fn position_census(corpus: &Corpus, word: &str) -> PositionCensus {
    let mut census = PositionCensus {
        positive: 0,
        prefix_blocked: 0,
        negative: 0,
    };
    for tok in corpus.utterances.iter().flatten() {
        if tok == word {
            census.positive += 1;
        } else if blocks_negative(tok, word) {
            census.prefix_blocked += 1;
        } else {
            census.negative += 1;
        }
    }
    census
}

/// Mean token length of the utterances containing `word`.
pub fn compute_mlu(corpus: &Corpus, word: &str) -> Result<f64, CorpusError> {
    let (total, n) = corpus
        .utterances
        .iter()
        .filter(|u| u.iter().any(|t| t == word))
        .fold((0usize, 0usize), |(total, n), u| (total + u.len(), n + 1));
    if n == 0 {
        return Err(CorpusError::WordAbsent(word.to_owned()));
    }
    Ok(total as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyFilter {
    pub retained: Vec<String>,
    /// Excluded words with their positive context type counts.
    pub excluded: Vec<(String, usize)>,
}

/// Keeps exactly the words with at least `min_types` distinct positive
/// context types.
pub fn filter_vocabulary(
    words: &[String],
    corpus: &Corpus,
    min_types: usize,
    max_context_len: usize,
) -> Result<VocabularyFilter, CorpusError> {
    if min_types == 0 {
        return Err(CorpusError::InvalidArgument("min_types must be at least 1".into()));
    }
    let mut retained = Vec::new();
    let mut excluded = Vec::new();
    for word in words {
        let n = positive_context_types(corpus, word, max_context_len).len();
        if n >= min_types {
            retained.push(word.clone());
        } else {
            excluded.push((word.clone(), n));
        }
    }
    Ok(VocabularyFilter { retained, excluded })
}

/// Lexical categories used by child vocabulary norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalCategory {
    Noun,
    Predicate,
    FunctionWord,
    Other,
}

impl LexicalCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            LexicalCategory::Noun => "noun",
            LexicalCategory::Predicate => "predicate",
            LexicalCategory::FunctionWord => "function_word",
            LexicalCategory::Other => "other",
        }
    }

    /// Maps the many spellings found in norm files onto the four categories.
    /// Adjectives and verbs are predicates; anything unknown is `other`.
    pub fn parse_lenient(raw: &str) -> Self {
        let norm = raw.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "noun" | "nouns" => LexicalCategory::Noun,
            "predicate" | "predicates" | "adjective" | "adjectives" | "verb" | "verbs" => LexicalCategory::Predicate,
            "function_word" | "function_words" | "function" => LexicalCategory::FunctionWord,
            _ => LexicalCategory::Other,
        }
    }
}

impl fmt::Display for LexicalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-word regression predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct WordFeatures {
    pub word: String,
    pub count: u64,
    /// Natural log of the corpus count; `-inf` when the word is absent.
    pub log_frequency: f64,
    pub n_chars: usize,
    pub concreteness: Option<f64>,
    pub mlu: Option<f64>,
    pub lexical_category: LexicalCategory,
}

impl WordFeatures {
    /// Corpus-derived features; concreteness and category are filled in by
    /// the caller from external norms.
    pub fn from_corpus(corpus: &Corpus, counts: &BTreeMap<String, u64>, word: &str) -> Self {
        let count = counts.get(word).copied().unwrap_or(0);
        WordFeatures {
            word: word.to_owned(),
            count,
            log_frequency: if count > 0 {
                (count as f64).ln()
            } else {
                f64::NEG_INFINITY
            },
            n_chars: word.chars().count(),
            concreteness: None,
            mlu: compute_mlu(corpus, word).ok(),
            lexical_category: LexicalCategory::Other,
        }
    }
}

/// Writes `word,count,log_frequency,mlu,n_chars`.
pub fn write_features_csv<W: Write>(out: W, features: &[WordFeatures]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["word", "count", "log_frequency", "mlu", "n_chars"])?;
    for f in features {
        w.write_record([
            f.word.clone(),
            f.count.to_string(),
            f.log_frequency.to_string(),
            f.mlu.map(|m| m.to_string()).unwrap_or_default(),
            f.n_chars.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
