//! Run configuration: a TOML file whose every key can be overridden from the
//! command line by its dotted path (`--aoa.window 5`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lexsig::analysis::{Predictor, DEFAULT_MAD_CUTOFF};
use lexsig::lm::Smoothing;
use lexsig::trajectory::{DEFAULT_EPSILON, DEFAULT_EPSILON_GRID, DEFAULT_WINDOW};
use lexsig::wordbank::DEFAULT_THRESHOLD;
use lexsig::SignatureKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Training seeds; one model trajectory per seed.
    pub seeds: Vec<u64>,
    /// Worker threads for word-parallel stages.
    pub workers: usize,
    pub corpus: CorpusConfig,
    pub sample: SampleConfig,
    pub backend: BackendConfig,
    pub reference: ReferenceConfig,
    pub schedule: ScheduleConfig,
    pub signatures: SignatureConfig,
    pub aoa: AoaConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            seeds: vec![0, 1, 2],
            workers: 1,
            corpus: CorpusConfig::default(),
            sample: SampleConfig::default(),
            backend: BackendConfig::default(),
            reference: ReferenceConfig::default(),
            schedule: ScheduleConfig::default(),
            signatures: SignatureConfig::default(),
            aoa: AoaConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Corpus the models are trained on; also the source of frequency and MLU.
    pub train: PathBuf,
    /// Corpus the contexts are sampled from.
    pub test: PathBuf,
    /// One target word per line.
    pub targets: PathBuf,
    /// Words with fewer distinct positive context types are excluded.
    /// Defaults to `sample.m_pos`.
    pub min_types: Option<usize>,
    pub max_context_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train: PathBuf::new(),
            test: PathBuf::new(),
            targets: PathBuf::new(),
            min_types: None,
            max_context_len: lexsig::corpus::DEFAULT_MAX_CONTEXT_LEN,
        }
    }
}

/// How the unconditional sample behind the `all` signatures is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllSample {
    /// One shared sample over every token boundary of the test corpus.
    Marginal,
    /// Per word, the union of its positive and negative samples.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub m_pos: usize,
    pub m_neg: usize,
    pub m_marg: usize,
    pub seed: u64,
    pub all_sample: AllSample,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            m_pos: 100,
            m_neg: 100,
            m_marg: 100,
            seed: 0,
            all_sample: AllSample::Marginal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ngram,
    ScoreFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    AddK,
    InterpolatedAddK,
    KneserNey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub order: usize,
    pub smoothing: SmoothingKind,
    /// Pseudo-count for the add-k smoothings.
    pub k: f64,
    /// Absolute discount for Kneser-Ney.
    pub discount: f64,
    /// Score records (file or directory of `.jsonl`) for `score_file`.
    pub path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Ngram,
            order: 2,
            smoothing: SmoothingKind::KneserNey,
            k: 0.1,
            discount: 0.75,
            path: None,
        }
    }
}

impl BackendConfig {
    pub fn smoothing(&self) -> Smoothing {
        match self.smoothing {
            SmoothingKind::AddK => Smoothing::AddK { k: self.k },
            SmoothingKind::InterpolatedAddK => Smoothing::InterpolatedAddK { k: self.k },
            SmoothingKind::KneserNey => Smoothing::KneserNey {
                discount: self.discount,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    None,
    /// A fully trained n-gram over the corpora in `train_on`.
    Ngram,
    /// `log_r` values read from score records.
    ScoreFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    pub order: usize,
    pub smoothing: SmoothingKind,
    pub k: f64,
    pub discount: f64,
    pub train_on: Vec<CorpusRole>,
    pub path: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            kind: ReferenceKind::None,
            order: 3,
            smoothing: SmoothingKind::KneserNey,
            k: 0.1,
            discount: 0.75,
            train_on: vec![CorpusRole::Train, CorpusRole::Test],
            path: None,
        }
    }
}

impl ReferenceConfig {
    pub fn smoothing(&self) -> Smoothing {
        BackendConfig {
            smoothing: self.smoothing,
            k: self.k,
            discount: self.discount,
            ..BackendConfig::default()
        }
        .smoothing()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Geometric schedule: number of checkpoints and first checkpoint size,
    /// in training tokens. The last checkpoint is the full corpus.
    pub checkpoints: usize,
    pub first: u64,
    /// Explicit schedule; overrides the geometric one when non-empty.
    pub steps: Vec<u64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            checkpoints: 12,
            first: 5000,
            steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    /// Labels such as `true_positive` or `intrinsic_all`.
    pub kinds: Vec<String>,
    /// Weight each context type by its corpus multiplicity.
    pub frequency_weighted: bool,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            kinds: SignatureKind::ALL.iter().map(|k| k.label()).collect(),
            frequency_weighted: false,
        }
    }
}

impl SignatureConfig {
    pub fn kinds(&self) -> Result<Vec<SignatureKind>> {
        self.kinds
            .iter()
            .map(|s| s.parse().map_err(|e| CliError::usage(format!("signatures.kinds: {e}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoaConfig {
    pub epsilon: f64,
    pub epsilon_grid: Vec<f64>,
    /// Odd moving-average width; 1 disables smoothing.
    pub window: usize,
    /// Per-kind epsilon, keyed by kind label.
    pub epsilon_overrides: BTreeMap<String, f64>,
}

impl Default for AoaConfig {
    fn default() -> Self {
        AoaConfig {
            epsilon: DEFAULT_EPSILON,
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            window: DEFAULT_WINDOW,
            epsilon_overrides: BTreeMap::new(),
        }
    }
}

impl AoaConfig {
    pub fn epsilon_for(&self, kind: SignatureKind) -> f64 {
        self.epsilon_overrides
            .get(&kind.label())
            .copied()
            .unwrap_or(self.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Child production norms: `word,category,month,proportion`.
    pub wordbank: Option<PathBuf>,
    /// Words to drop from the norms, one per line.
    pub exclusions: Option<PathBuf>,
    /// External word features: `word,concreteness,lexical_category`.
    pub features: Option<PathBuf>,
    pub threshold: f64,
    pub interpolate: bool,
    pub predictors: Vec<String>,
    /// Median-absolute-deviation cutoff for AoA outliers; 0 disables.
    pub mad_cutoff: f64,
    /// Length of the first- and last-acquired lists.
    pub first_last_n: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            wordbank: None,
            exclusions: None,
            features: None,
            threshold: DEFAULT_THRESHOLD,
            interpolate: true,
            predictors: ["log_frequency", "concreteness", "n_chars", "mlu", "lexical_category"]
                .map(String::from)
                .to_vec(),
            mad_cutoff: DEFAULT_MAD_CUTOFF,
            first_last_n: 10,
        }
    }
}

impl AnalysisConfig {
    pub fn predictors(&self) -> Result<Vec<Predictor>> {
        self.predictors
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::usage(format!("analysis.predictors: {e}")))
            })
            .collect()
    }
}

/// Loads `path`, resolves its relative paths against the file's directory,
/// then applies `overrides` (dotted key, raw value). Overridden paths are
/// taken as given.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.resolve_paths(base);
    cfg.apply_overrides(overrides)
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.train);
        fix(&mut self.corpus.test);
        fix(&mut self.corpus.targets);
        for p in [
            &mut self.backend.path,
            &mut self.reference.path,
            &mut self.analysis.wordbank,
            &mut self.analysis.exclusions,
            &mut self.analysis.features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Sets dotted keys. Unknown keys and ill-typed values are usage errors.
    pub fn apply_overrides(self, overrides: &[(String, String)]) -> Result<RunConfig> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = toml::Value::try_from(&self).map_err(CliError::usage)?;
        for (key, raw) in overrides {
            let unknown = || CliError::usage(format!("`{key}` is not a configuration key"));
            let parts: Vec<&str> = key.split('.').collect();
            let (last, parents) = parts.split_last().ok_or_else(unknown)?;
            let mut node = &mut root;
            for part in parents {
                node = node.get_mut(*part).ok_or_else(unknown)?;
            }
            let table = node.as_table_mut().ok_or_else(unknown)?;
            if !table.contains_key(*last) && !is_optional_key(key) {
                return Err(unknown());
            }
            table.insert((*last).to_owned(), parse_value(raw));
        }
        root.try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("override: {}", e.message())))
    }

    pub fn min_types(&self) -> usize {
        self.corpus.min_types.unwrap_or(self.sample.m_pos)
    }

    /// Checks the invariants every stage relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        for (name, m) in [
            ("sample.m_pos", self.sample.m_pos),
            ("sample.m_neg", self.sample.m_neg),
            ("sample.m_marg", self.sample.m_marg),
        ] {
            if m == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.corpus.max_context_len == 0 {
            return bad("corpus.max_context_len must be at least 1".into());
        }
        if self.aoa.window == 0 || self.aoa.window.is_multiple_of(2) {
            return bad(format!(
                "aoa.window must be odd and at least 1, got {}",
                self.aoa.window
            ));
        }
        let eps = std::iter::once(&self.aoa.epsilon)
            .chain(&self.aoa.epsilon_grid)
            .chain(self.aoa.epsilon_overrides.values());
        for &e in eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("epsilon values must be positive, got {e}"));
            }
        }
        for label in self.aoa.epsilon_overrides.keys() {
            if label.parse::<SignatureKind>().is_err() {
                return bad(format!("aoa.epsilon_overrides: unknown kind `{label}`"));
            }
        }
        if self.signatures.kinds()?.is_empty() {
            return bad("signatures.kinds must not be empty".into());
        }
        self.analysis.predictors()?;
        if !(self.analysis.threshold > 0.0 && self.analysis.threshold <= 1.0) {
            return bad(format!(
                "analysis.threshold must lie in (0, 1], got {}",
                self.analysis.threshold
            ));
        }
        if self.backend.kind == BackendKind::Ngram && self.backend.order == 0 {
            return bad("backend.order must be at least 1".into());
        }
        if self.schedule.steps.is_empty() && self.schedule.checkpoints < 2 {
            return bad("schedule.checkpoints must be at least 2".into());
        }
        Ok(())
    }

    /// Fails unless each of `paths` names an existing file.
    pub fn require_files(paths: &[(&str, &Path)]) -> Result<()> {
        for (key, p) in paths {
            if p.as_os_str().is_empty() {
                return Err(CliError::usage(format!("{key} is not set")));
            }
            if !p.is_file() {
                return Err(CliError::usage(format!("{key}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Keys whose default is absent and therefore missing from the serialized
/// table.
fn is_optional_key(key: &str) -> bool {
    matches!(
        key,
        "corpus.min_types"
            | "backend.path"
            | "reference.path"
            | "analysis.wordbank"
            | "analysis.exclusions"
            | "analysis.features"
    ) || key.starts_with("aoa.epsilon_overrides.")
}
