//! The pipeline stages. Each reads only its predecessor's files and the
//! configuration, and stamps its outputs with its own fingerprint.

mod analyze;
mod aoa;
mod sample;
mod score;
mod signatures;

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde_json::json;

use crate::config::{BackendKind, ReferenceKind, RunConfig};
use crate::error::{CliError, Result};
use crate::layout::Layout;
use crate::stamp::{digest_path, fingerprint, Stage, Stamp};

pub use analyze::{run_analyze, AnalyzeSummary};
pub use aoa::{run_aoa, AoaSummary};
pub use sample::{load_samples, read_targets, run_sample, SampleManifest, SampleSummary, WordSamples};
pub use score::{run_score, ScoreManifest, ScoreSummary};
pub use signatures::{run_signatures, SignaturesSummary};

/// A validated configuration plus everything derived from it.
pub struct Run {
    pub cfg: RunConfig,
    pub layout: Layout,
    pool: rayon::ThreadPool,
    stamps: [OnceLock<Stamp>; 5],
}

fn digest_opt(path: &Option<std::path::PathBuf>) -> Result<Option<String>> {
    path.as_deref().map(digest_path).transpose()
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(CliError::usage)?;
        Ok(Run {
            layout: Layout::new(&cfg.output_dir),
            cfg,
            pool,
            stamps: Default::default(),
        })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// The fingerprint of `stage`, which covers the configuration and input
    /// file contents of that stage and of every stage before it.
    pub fn stamp(&self, stage: Stage) -> Result<Stamp> {
        let idx = stage as usize;
        if let Some(s) = self.stamps[idx].get() {
            return Ok(s.clone());
        }
        let cfg = &self.cfg;
        let parts = match stage {
            Stage::Sample => json!({
                "stage": "sample",
                "test": digest_path(&cfg.corpus.test)?,
                "targets": digest_path(&cfg.corpus.targets)?,
                "min_types": cfg.min_types(),
                "max_context_len": cfg.corpus.max_context_len,
                "sample": cfg.sample,
            }),
            Stage::Score => {
                let backend = match cfg.backend.kind {
                    BackendKind::Ngram => json!({
                        "kind": "ngram",
                        "order": cfg.backend.order,
                        "smoothing": cfg.backend.smoothing(),
                        "train": digest_path(&cfg.corpus.train)?,
                    }),
                    BackendKind::ScoreFile => json!({
                        "kind": "score_file",
                        "records": digest_opt(&cfg.backend.path)?,
                    }),
                };
                let reference = match cfg.reference.kind {
                    ReferenceKind::None => json!(null),
                    ReferenceKind::Ngram => json!({
                        "order": cfg.reference.order,
                        "smoothing": cfg.reference.smoothing(),
                        "train_on": cfg.reference.train_on,
                        "train": digest_path(&cfg.corpus.train)?,
                        "test": digest_path(&cfg.corpus.test)?,
                    }),
                    ReferenceKind::ScoreFile => json!({ "records": digest_opt(&cfg.reference.path)? }),
                };
                json!({
                    "stage": "score",
                    "after": self.stamp(Stage::Sample)?.fingerprint,
                    "seeds": cfg.seeds,
                    "backend": backend,
                    "reference": reference,
                    "schedule": cfg.schedule,
                })
            }
            Stage::Signatures => json!({
                "stage": "signatures",
                "after": self.stamp(Stage::Score)?.fingerprint,
                "signatures": cfg.signatures,
            }),
            Stage::Aoa => json!({
                "stage": "aoa",
                "after": self.stamp(Stage::Signatures)?.fingerprint,
                "aoa": cfg.aoa,
            }),
            Stage::Analyze => json!({
                "stage": "analyze",
                "after": self.stamp(Stage::Aoa)?.fingerprint,
                "train": digest_path(&cfg.corpus.train)?,
                "wordbank": digest_opt(&cfg.analysis.wordbank)?,
                "exclusions": digest_opt(&cfg.analysis.exclusions)?,
                "features": digest_opt(&cfg.analysis.features)?,
                "threshold": cfg.analysis.threshold,
                "interpolate": cfg.analysis.interpolate,
                "predictors": cfg.analysis.predictors,
                "mad_cutoff": cfg.analysis.mad_cutoff,
                "first_last_n": cfg.analysis.first_last_n,
            }),
        };
        let stamp = Stamp {
            stage,
            fingerprint: fingerprint(&parts),
        };
        Ok(self.stamps[idx].get_or_init(|| stamp).clone())
    }
}

/// Removes a stage's previous outputs so stale files cannot mix with new ones.
fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Renders CSV rows into bytes.
fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Full pipeline: sample, score, signatures, aoa, analyze.
pub fn run_all(run: &Run) -> Result<AnalyzeSummary> {
    run_sample(run)?;
    run_score(run)?;
    run_signatures(run)?;
    run_aoa(run)?;
    run_analyze(run)
}
