//! Synthetic fixtures: a Zipfian class-grammar "child-directed" language, target
//! words spread over frequency ranks, and child norms whose acquisition
//! ages depend on frequency and lexical category.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::corpus::{count_frequencies, Corpus, LexicalCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Word classes; words are dealt to classes round-robin by rank.
    pub n_classes: usize,
    /// Classes that may follow each class.
    pub class_successors: usize,
    /// Probability that the next class is drawn uniformly instead.
    pub class_leak: f64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_targets: usize,
    /// Inclusive frequency-rank range the targets are drawn from (0 = most frequent).
    pub target_ranks: (usize, usize),
    /// Targets listed in the exclusion file, mimicking misannotated norms.
    pub n_excluded: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            vocab_size: 300,
            zipf_exponent: 1.05,
            n_classes: 20,
            class_successors: 3,
            class_leak: 0.05,
            train_utterances: 100_000,
            test_utterances: 20_000,
            min_len: 3,
            max_len: 12,
            n_targets: 40,
            target_ranks: (3, 250),
            n_excluded: 2,
        }
    }
}

/// A first-order class grammar: each class has a few successor classes,
/// and each word is drawn from its class by its Zipfian weight. A word's
/// share of every context that admits it is proportional to its frequency.
#[derive(Debug, Clone)]
pub struct ClassLanguage {
    pub words: Vec<String>,
    members: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    start: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    leak: f64,
    min_len: usize,
    max_len: usize,
}

const ONSETS: [&str; 14] = ["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "sh", "ch"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "oo"];

/// Unique pronounceable forms; frequent ranks get fewer syllables.
fn word_forms(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    for rank in 0..n {
        let base = 1 + usize::from(rank >= 30) + usize::from(rank >= 400);
        loop {
            let syllables = base + usize::from(rng.random_bool(0.3));
            let w: String = (0..syllables)
                .map(|_| {
                    let o = ONSETS[rng.random_range(0..ONSETS.len())];
                    let v = NUCLEI[rng.random_range(0..NUCLEI.len())];
                    format!("{o}{v}")
                })
                .collect();
            if seen.insert(w.clone()) {
                out.push(w);
                break;
            }
        }
    }
    out
}

impl ClassLanguage {
    pub fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let words = word_forms(cfg.vocab_size, rng);
        let n_classes = cfg.n_classes.clamp(1, cfg.vocab_size.max(1));
        let weight = |r: usize| 1.0 / (r as f64 + 2.7).powf(cfg.zipf_exponent);
        let members = (0..n_classes)
            .map(|c| {
                let ids: Vec<usize> = (c..cfg.vocab_size).step_by(n_classes).collect();
                let idx = WeightedIndex::new(ids.iter().map(|&r| weight(r))).expect("positive weights");
                (ids, idx)
            })
            .collect();
        let start = WeightedIndex::new(vec![1.0; n_classes]).expect("positive weights");
        let n_succ = cfg.class_successors.clamp(1, n_classes);
        let successors = (0..n_classes)
            .map(|_| {
                let mut pool: Vec<usize> = (0..n_classes).collect();
                let chosen: Vec<usize> = (0..n_succ)
                    .map(|_| pool.swap_remove(rng.random_range(0..pool.len())))
                    .collect();
                let w: Vec<f64> = (0..chosen.len()).map(|j| 1.0 / (j as f64 + 1.0)).collect();
                let idx = WeightedIndex::new(&w).expect("positive weights");
                (chosen, idx)
            })
            .collect();
        ClassLanguage {
            words,
            members,
            start,
            successors,
            leak: cfg.class_leak.clamp(0.0, 1.0),
            min_len: cfg.min_len,
            max_len: cfg.max_len,
        }
    }

    pub fn utterance(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let len = rng.random_range(self.min_len..=self.max_len);
        let mut class = self.start.sample(rng);
        let mut out = Vec::with_capacity(len);
        loop {
            let (ids, idx) = &self.members[class];
            out.push(self.words[ids[idx.sample(rng)]].clone());
            if out.len() == len {
                return out;
            }
            class = if rng.random_bool(self.leak) {
                self.start.sample(rng)
            } else {
                let (succ, idx) = &self.successors[class];
                succ[idx.sample(rng)]
            };
        }
    }

    pub fn corpus(&self, source_id: &str, n: usize, rng: &mut ChaCha8Rng) -> Corpus {
        Corpus::new(source_id, (0..n).map(|_| self.utterance(rng)).collect())
    }
}

/// One synthetic norms row: a word's production curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNorm {
    pub word: String,
    pub category: LexicalCategory,
    pub concreteness: f64,
    /// Age (months) at which half of children produce the word.
    pub midpoint: f64,
    pub curve: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Corpus,
    pub test: Corpus,
    pub targets: Vec<String>,
    pub norms: Vec<SyntheticNorm>,
    pub excluded: Vec<String>,
}

pub const NORM_MONTHS: std::ops::RangeInclusive<u32> = 16..=30;

fn category_for(rank: usize, i: usize) -> LexicalCategory {
    if rank < 40 {
        LexicalCategory::FunctionWord
    } else if i % 9 == 8 {
        LexicalCategory::Other
    } else if i.is_multiple_of(2) {
        LexicalCategory::Noun
    } else {
        LexicalCategory::Predicate
    }
}

/// Generates corpora, targets and norms from one seed.
pub fn generate(cfg: &SynthConfig) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lang = ClassLanguage::new(cfg, &mut rng);
    let train = lang.corpus("synthetic-train", cfg.train_utterances, &mut rng);
    let test = lang.corpus("synthetic-test", cfg.test_utterances, &mut rng);

    // Targets: log-spaced ranks by observed training frequency.
    let counts = count_frequencies(&train);
    let mut by_freq: Vec<(&String, &u64)> = counts.iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let (lo, hi) = cfg.target_ranks;
    let hi = hi.min(by_freq.len().saturating_sub(1));
    let mut ranks = BTreeSet::new();
    for i in 0..cfg.n_targets {
        let t = if cfg.n_targets > 1 {
            i as f64 / (cfg.n_targets - 1) as f64
        } else {
            0.0
        };
        let r = ((lo.max(1) as f64).ln() * (1.0 - t) + (hi.max(1) as f64).ln() * t)
            .exp()
            .round() as usize;
        let mut r = r.clamp(lo, hi);
        while ranks.contains(&r) && r < hi {
            r += 1;
        }
        ranks.insert(r);
    }
    let targets: Vec<String> = ranks.iter().map(|&r| by_freq[r].0.clone()).collect();

    let noise = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
    let log_freqs: Vec<f64> = targets.iter().map(|w| (counts[w] as f64).ln()).collect();
    let mean_lf = log_freqs.iter().sum::<f64>() / log_freqs.len().max(1) as f64;
    let rank_of: BTreeMap<&String, usize> = by_freq.iter().enumerate().map(|(r, (w, _))| (*w, r)).collect();
    let norms = targets
        .iter()
        .zip(&log_freqs)
        .enumerate()
        .map(|(i, (w, lf))| {
            let category = category_for(rank_of[w], i);
            let concreteness = match category {
                LexicalCategory::Noun => 3.5 + 0.8 * noise.sample(&mut rng),
                _ => 2.3 + 0.8 * noise.sample(&mut rng),
            }
            .clamp(1.0, 5.0);
            let offset = match category {
                LexicalCategory::FunctionWord => 2.0,
                LexicalCategory::Predicate => 1.0,
                _ => 0.0,
            };
            let midpoint =
                23.0 - 1.6 * (lf - mean_lf) + offset - 0.6 * (concreteness - 3.0) + 0.8 * noise.sample(&mut rng);
            let curve = NORM_MONTHS
                .map(|m| {
                    let p = 1.0 / (1.0 + (-(m as f64 - midpoint) / 1.3).exp());
                    (m, (p * 1000.0).round() / 1000.0)
                })
                .collect();
            SyntheticNorm {
                word: w.clone(),
                category,
                concreteness: (concreteness * 100.0).round() / 100.0,
                midpoint,
                curve,
            }
        })
        .collect();
    let excluded = targets.iter().rev().step_by(7).take(cfg.n_excluded).cloned().collect();
    SyntheticData {
        train,
        test,
        targets,
        norms,
        excluded,
    }
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a str>) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()
}

fn write_corpus(path: &Path, corpus: &Corpus) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for u in corpus.utterances() {
        writeln!(out, "{}", u.join(" "))?;
    }
    out.flush()
}

impl SyntheticData {
    /// Writes `train.txt`, `test.txt`, `targets.txt`, `wordbank.csv`,
    /// `features.csv` and `exclusions.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        write_corpus(&dir.join("train.txt"), &self.train)?;
        write_corpus(&dir.join("test.txt"), &self.test)?;
        write_lines(&dir.join("targets.txt"), self.targets.iter().map(String::as_str))?;
        let mut excl = vec!["# synthetic misannotations".to_owned()];
        excl.extend(self.excluded.iter().cloned());
        write_lines(&dir.join("exclusions.txt"), excl.iter().map(String::as_str))?;

        let mut wb = csv::Writer::from_path(dir.join("wordbank.csv"))?;
        wb.write_record(["word", "category", "month", "proportion"])?;
        let mut feats = csv::Writer::from_path(dir.join("features.csv"))?;
        feats.write_record(["word", "concreteness", "lexical_category"])?;
        for n in &self.norms {
            for &(m, p) in &n.curve {
                wb.write_record([n.word.as_str(), n.category.as_str(), &m.to_string(), &p.to_string()])?;
            }
            feats.write_record([n.word.as_str(), &n.concreteness.to_string(), n.category.as_str()])?;
        }
        wb.flush()?;
        feats.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::spearman;

    fn small() -> SynthConfig {
        SynthConfig {
            vocab_size: 300,
            train_utterances: 2000,
            test_utterances: 1000,
            n_targets: 20,
            target_ranks: (5, 150),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.train, b.train);
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.norms, b.norms);
        let c = generate(&SynthConfig { seed: 8, ..small() });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn shape_of_generated_data() {
        let cfg = small();
        let d = generate(&cfg);
        assert_eq!(d.train.utterances().len(), cfg.train_utterances);
        assert!(d
            .train
            .utterances()
            .iter()
            .all(|u| (cfg.min_len..=cfg.max_len).contains(&u.len())));
        assert_eq!(d.targets.len(), cfg.n_targets);
        assert_eq!(d.norms.len(), cfg.n_targets);
        assert_eq!(d.excluded.len(), cfg.n_excluded);
        // Word frequencies are heavy-tailed.
        let counts = count_frequencies(&d.train);
        let mut freq: Vec<u64> = counts.values().copied().collect();
        freq.sort_unstable_by(|a, b| b.cmp(a));
        assert!(freq[0] > 20 * freq[freq.len() / 2]);
    }

    #[test]
    fn norms_track_frequency() {
        let d = generate(&small());
        let counts = count_frequencies(&d.train);
        let lf: Vec<f64> = d.norms.iter().map(|n| (counts[&n.word] as f64).ln()).collect();
        let mid: Vec<f64> = d.norms.iter().map(|n| n.midpoint).collect();
        assert!(spearman(&lf, &mid).unwrap() < -0.5);
        for n in &d.norms {
            assert!(n.curve.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}
