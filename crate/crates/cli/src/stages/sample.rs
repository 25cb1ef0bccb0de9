use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Cursor;
use std::path::Path;

use lexsig::corpus::{
    filter_vocabulary, sample_marginal_contexts, sample_negative_contexts, sample_positive_contexts, ContextEntry,
};
use lexsig::lm::records::write_context_sidecar;
use lexsig::{ContextSample, Corpus, Polarity};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{clear_dir, csv_bytes, Run};
use crate::config::{AllSample, RunConfig};
use crate::error::{CliError, Result};
use crate::stamp::{self, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestWord {
    pub word: String,
    pub positive: usize,
    pub negative: usize,
    pub all: usize,
    /// Polarities whose sample came up short of its requested size.
    pub short: Vec<Polarity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub all_sample: AllSample,
    pub words: Vec<ManifestWord>,
    /// Excluded words with their positive context type counts.
    pub excluded: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub retained: usize,
    pub excluded: Vec<(String, usize)>,
}

/// The three samples of one word.
pub type WordSamples = BTreeMap<Polarity, ContextSample>;

/// Target words in file order, without blanks, `#` comments or repeats.
pub fn read_targets(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let w = line.trim();
        if w.is_empty() || w.starts_with('#') {
            continue;
        }
        if seen.insert(w.to_owned()) {
            out.push(w.to_owned());
        } else {
            warn!("target `{w}` listed more than once");
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!("{} lists no target words", path.display())));
    }
    Ok(out)
}

/// Sampling seed for one (purpose, word), independent of word order.
fn derived_seed(base: u64, purpose: &str, word: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(word.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Positive and negative contexts merged, multiplicities summed.
fn union_sample(word: &str, pos: &ContextSample, neg: &ContextSample) -> ContextSample {
    let mut merged: BTreeMap<&Vec<String>, u64> = BTreeMap::new();
    for e in pos.contexts.iter().chain(&neg.contexts) {
        *merged.entry(&e.tokens).or_insert(0) += e.count;
    }
    ContextSample {
        word: Some(word.to_owned()),
        polarity: Polarity::Marginal,
        contexts: merged
            .into_iter()
            .map(|(tokens, count)| ContextEntry {
                tokens: tokens.clone(),
                count,
            })
            .collect(),
        capacity: pos.capacity + neg.capacity,
        insufficient_types: pos.insufficient_types || neg.insufficient_types,
    }
}

fn sample_word(cfg: &RunConfig, test: &Corpus, word: &str) -> Result<(ContextSample, ContextSample)> {
    let s = &cfg.sample;
    let len = cfg.corpus.max_context_len;
    let pos = sample_positive_contexts(test, word, s.m_pos, len, derived_seed(s.seed, "positive", word))?;
    let neg = sample_negative_contexts(test, word, s.m_neg, len, derived_seed(s.seed, "negative", word))?;
    Ok((pos, neg))
}

fn jsonl_bytes(sample: &ContextSample) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    sample.write_jsonl(&mut buf)?;
    Ok(buf)
}

pub fn run_sample(run: &Run) -> Result<SampleSummary> {
    let cfg = &run.cfg;
    RunConfig::require_files(&[
        ("corpus.test", &cfg.corpus.test),
        ("corpus.targets", &cfg.corpus.targets),
    ])?;
    let stamp = run.stamp(Stage::Sample)?;
    let layout = &run.layout;
    let test = Corpus::load(&cfg.corpus.test)?;
    let targets = read_targets(&cfg.corpus.targets)?;
    info!("sampling contexts for {} target words", targets.len());

    let filter = run.install(|| -> Result<_> {
        let parts: Vec<_> = targets
            .par_iter()
            .map(|w| {
                filter_vocabulary(
                    std::slice::from_ref(w),
                    &test,
                    run.cfg.min_types(),
                    cfg.corpus.max_context_len,
                )
            })
            .collect::<Result<_, _>>()?;
        Ok(parts)
    })?;
    let retained: Vec<String> = filter.iter().flat_map(|f| f.retained.clone()).collect();
    let excluded: Vec<(String, usize)> = filter.iter().flat_map(|f| f.excluded.clone()).collect();
    for (w, n) in &excluded {
        warn!("excluding `{w}`: {n} positive context types, need {}", cfg.min_types());
    }
    if retained.is_empty() {
        return Err(CliError::data("no target word has enough positive context types"));
    }

    let pairs = run.install(|| {
        retained
            .par_iter()
            .map(|w| sample_word(cfg, &test, w))
            .collect::<Result<Vec<_>>>()
    })?;
    let marginal = match cfg.sample.all_sample {
        AllSample::Marginal => Some(sample_marginal_contexts(
            &test,
            cfg.sample.m_marg,
            cfg.corpus.max_context_len,
            derived_seed(cfg.sample.seed, "marginal", ""),
        )?),
        AllSample::Union => None,
    };

    clear_dir(&layout.root().join("samples"))?;
    let mut words = Vec::new();
    let mut sidecar: Vec<&[String]> = Vec::new();
    let unions: Vec<Option<ContextSample>> = retained
        .iter()
        .zip(&pairs)
        .map(|(w, (pos, neg))| (cfg.sample.all_sample == AllSample::Union).then(|| union_sample(w, pos, neg)))
        .collect();
    for ((word, (pos, neg)), union) in retained.iter().zip(&pairs).zip(&unions) {
        let mut short = Vec::new();
        for s in [Some(pos), Some(neg), union.as_ref()].into_iter().flatten() {
            stamp::write_text(&layout.sample_file(s.polarity, word), &stamp, &jsonl_bytes(s)?)?;
            sidecar.extend(s.contexts.iter().map(|e| e.tokens.as_slice()));
            if s.insufficient_types && s.polarity != Polarity::Marginal {
                short.push(s.polarity);
                warn!(
                    "`{word}`: only {} {} context types available",
                    s.len(),
                    s.polarity.as_sample_str()
                );
            }
        }
        words.push(ManifestWord {
            word: word.clone(),
            positive: pos.len(),
            negative: neg.len(),
            all: union.as_ref().or(marginal.as_ref()).map_or(0, |s| s.len()),
            short,
        });
    }
    if let Some(m) = &marginal {
        stamp::write_text(&layout.marginal_sample(), &stamp, &jsonl_bytes(m)?)?;
        sidecar.extend(m.contexts.iter().map(|e| e.tokens.as_slice()));
    }
    let mut side = Vec::new();
    write_context_sidecar(&mut side, sidecar)?;
    stamp::write_text(&layout.context_sidecar(), &stamp, &side)?;
    let excluded_csv = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["word", "positive_types", "min_types"])?;
        for (word, n) in &excluded {
            w.write_record([word.as_str(), &n.to_string(), &cfg.min_types().to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    stamp::write_text(&layout.excluded_words(), &stamp, &excluded_csv)?;
    let manifest = SampleManifest {
        all_sample: cfg.sample.all_sample,
        words,
        excluded: excluded.clone(),
    };
    stamp::write_json(&layout.sample_manifest(), &stamp, &manifest)?;
    info!("sampled {} words, excluded {}", retained.len(), excluded.len());
    Ok(SampleSummary {
        retained: retained.len(),
        excluded,
    })
}

fn read_sample(path: &Path, stamp: &stamp::Stamp) -> Result<ContextSample> {
    let body = stamp::read_text(path, stamp)?;
    ContextSample::read_jsonl(Cursor::new(body)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Reads the manifest and every word's samples written by [`run_sample`].
pub fn load_samples(run: &Run) -> Result<(SampleManifest, BTreeMap<String, WordSamples>)> {
    let stamp = run.stamp(Stage::Sample)?;
    let layout = &run.layout;
    let manifest: SampleManifest = stamp::read_json(&layout.sample_manifest(), &stamp)?;
    let marginal = match manifest.all_sample {
        AllSample::Marginal => Some(read_sample(&layout.marginal_sample(), &stamp)?),
        AllSample::Union => None,
    };
    let mut out = BTreeMap::new();
    for w in &manifest.words {
        let mut samples = WordSamples::new();
        for p in [Polarity::Positive, Polarity::Negative] {
            samples.insert(p, read_sample(&layout.sample_file(p, &w.word), &stamp)?);
        }
        let all = match &marginal {
            Some(m) => m.clone(),
            None => read_sample(&layout.sample_file(Polarity::Marginal, &w.word), &stamp)?,
        };
        samples.insert(Polarity::Marginal, all);
        out.insert(w.word.clone(), samples);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_separate_purposes_and_words() {
        let a = derived_seed(1, "positive", "dog");
        assert_eq!(a, derived_seed(1, "positive", "dog"));
        assert_ne!(a, derived_seed(1, "negative", "dog"));
        assert_ne!(a, derived_seed(1, "positive", "cat"));
        assert_ne!(a, derived_seed(2, "positive", "dog"));
    }

    #[test]
    fn union_sums_shared_contexts() {
        let ctx = |s: &str, n| ContextEntry {
            tokens: s.split_whitespace().map(String::from).collect(),
            count: n,
        };
        let mk = |p, cs| ContextSample {
            word: Some("w".into()),
            polarity: p,
            contexts: cs,
            capacity: 2,
            insufficient_types: false,
        };
        let pos = mk(Polarity::Positive, vec![ctx("a", 2), ctx("a b", 1)]);
        let neg = mk(Polarity::Negative, vec![ctx("a", 3), ctx("c", 1)]);
        let u = union_sample("w", &pos, &neg);
        assert_eq!(u.polarity, Polarity::Marginal);
        let counts: Vec<(String, u64)> = u.contexts.iter().map(|e| (e.tokens.join(" "), e.count)).collect();
        assert_eq!(counts, vec![("a".into(), 5), ("a b".into(), 1), ("c".into(), 1)]);
    }
}
