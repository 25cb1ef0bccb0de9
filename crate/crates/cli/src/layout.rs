//! Where each stage reads and writes, relative to the output directory.

use std::path::{Path, PathBuf};

use lexsig::{Polarity, SignatureKind};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

/// File-name stem for a word: the word itself when it is plain lowercase
/// ASCII, otherwise `~` followed by its UTF-8 bytes in hex.
pub fn file_stem(word: &str) -> String {
    let plain = !word.is_empty()
        && word.len() <= 64
        && word
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
    if plain {
        word.to_owned()
    } else {
        format!("~{}", hex::encode(word.as_bytes()))
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn at(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.root.clone(), |p, s| p.join(s))
    }

    pub fn sample_manifest(&self) -> PathBuf {
        self.at(&["samples", "manifest.json"])
    }

    pub fn sample_file(&self, polarity: Polarity, word: &str) -> PathBuf {
        self.at(&[
            "samples",
            polarity.as_sample_str(),
            &format!("{}.jsonl", file_stem(word)),
        ])
    }

    pub fn marginal_sample(&self) -> PathBuf {
        self.at(&["samples", "marginal.jsonl"])
    }

    pub fn excluded_words(&self) -> PathBuf {
        self.at(&["samples", "excluded.csv"])
    }

    pub fn context_sidecar(&self) -> PathBuf {
        self.at(&["samples", "contexts.jsonl"])
    }

    pub fn score_manifest(&self) -> PathBuf {
        self.at(&["scores", "manifest.json"])
    }

    pub fn score_file(&self, seed: u64, step: u64) -> PathBuf {
        self.at(&["scores", &format!("seed{seed}"), &format!("step{step}.jsonl")])
    }

    pub fn signatures(&self) -> PathBuf {
        self.at(&["signatures", "signatures.csv"])
    }

    pub fn intrinsic_diagnostics(&self) -> PathBuf {
        self.at(&["signatures", "intrinsic_diagnostics.csv"])
    }

    pub fn skipped_kinds(&self) -> PathBuf {
        self.at(&["signatures", "skipped.csv"])
    }

    pub fn dropped_contexts(&self) -> PathBuf {
        self.at(&["signatures", "dropped.csv"])
    }

    pub fn trajectories(&self) -> PathBuf {
        self.at(&["aoa", "trajectories.csv"])
    }

    pub fn smoothed_trajectories(&self) -> PathBuf {
        self.at(&["aoa", "trajectories_smoothed.csv"])
    }

    pub fn aoa(&self) -> PathBuf {
        self.at(&["aoa", "aoa.csv"])
    }

    pub fn aoa_sweep(&self) -> PathBuf {
        self.at(&["aoa", "aoa_sweep.csv"])
    }

    pub fn nonconvergence(&self) -> PathBuf {
        self.at(&["aoa", "nonconvergence.csv"])
    }

    pub fn aggregate(&self) -> PathBuf {
        self.at(&["aoa", "aggregate.csv"])
    }

    pub fn aggregate_excluded(&self) -> PathBuf {
        self.at(&["aoa", "aggregate_excluded.csv"])
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.at(&["report", name])
    }

    pub fn epsilon_correlation(&self, kind: SignatureKind, ext: &str) -> PathBuf {
        self.at(&["report", "epsilon_correlation", &format!("{}.{ext}", kind.label())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_plain_or_hex() {
        assert_eq!(file_stem("dog"), "dog");
        assert_eq!(file_stem("ice-cream"), "ice-cream");
        assert_eq!(file_stem("Dog"), "~446f67");
        assert_eq!(file_stem("can't"), "~63616e2774");
        assert_eq!(file_stem("../x"), "~2e2e2f78");
        assert_ne!(file_stem("Dog"), file_stem("dog"));
    }
}
