use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use lexsig::corpus::context_id;
use lexsig::lm::records::{read_score_records, write_score_records};
use lexsig::lm::{
    export_records, geometric_schedule, validate_schedule, word_tokens, CheckpointId, LmError, NgramTrainer, ScoreFile,
    ScoreRecord, Scorer,
};
use lexsig::{Corpus, Polarity};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clear_dir, load_samples, Run, WordSamples};
use crate::config::{BackendKind, CorpusRole, ReferenceKind, RunConfig};
use crate::error::{CliError, Result};
use crate::stamp::{self, collect_jsonl, Stage};

/// Missing triples listed individually before the rest are only counted.
const MISSING_SHOWN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreManifest {
    /// Checkpoint steps written for each seed.
    pub steps: BTreeMap<u64, Vec<u64>>,
    pub total_steps: BTreeMap<u64, u64>,
    pub reference: bool,
    pub context_prob: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub checkpoints: usize,
    pub records: usize,
}

type Queries = Vec<(String, Vec<(String, Vec<String>)>)>;

/// Every (word, context) pair a later stage will ask about, grouped by word.
fn queries(samples: &BTreeMap<String, WordSamples>) -> Queries {
    samples
        .iter()
        .map(|(word, by_pol)| {
            let qs = [Polarity::Positive, Polarity::Negative, Polarity::Marginal]
                .iter()
                .filter_map(|p| by_pol.get(p))
                .flat_map(|s| s.contexts.iter().map(|e| (word.clone(), e.tokens.clone())))
                .collect();
            (word.clone(), qs)
        })
        .collect()
}

/// `log_r` looked up by (word, context id), ignoring checkpoints.
struct ReferenceTable {
    scores: HashMap<(String, String), f64>,
}

impl ReferenceTable {
    fn load(path: &Path) -> Result<Self> {
        let mut scores: HashMap<(String, String), f64> = HashMap::new();
        for (file, records) in read_records(path)? {
            for (line, rec) in records {
                let at = || format!("{}:{line}", file.display());
                let Some(r) = rec.log_r else {
                    return Err(CliError::data(format!("{}: reference record has no log_r", at())));
                };
                if r.is_nan() || r > 0.0 {
                    return Err(CliError::data(format!(
                        "{}: log_r = {r} is not a log-probability",
                        at()
                    )));
                }
                let key = (word_tokens(&rec.word)?.join(" "), rec.context_id);
                if let Some(prev) = scores.insert(key.clone(), r) {
                    if (prev - r).abs() > 1e-9 * prev.abs().max(1.0) {
                        return Err(CliError::data(format!(
                            "{}: conflicting log_r for `{}` in context {} ({prev} vs {r})",
                            at(),
                            key.0,
                            key.1
                        )));
                    }
                }
            }
        }
        Ok(ReferenceTable { scores })
    }
}

impl Scorer for ReferenceTable {
    fn log_prob_word(&self, word: &str, context: &[String]) -> Result<f64, LmError> {
        let key = (word_tokens(word)?.join(" "), context_id(context));
        self.scores.get(&key).copied().ok_or(LmError::MissingTriple {
            word: key.0,
            context_id: key.1,
            step: 0,
            seed: 0,
        })
    }
}

/// Records with their line numbers.
type NumberedRecords = Vec<(usize, ScoreRecord)>;

/// Records of a file, or of every `.jsonl` file below a directory.
fn read_records(path: &Path) -> Result<Vec<(std::path::PathBuf, NumberedRecords)>> {
    let files = if path.is_dir() {
        let mut files = Vec::new();
        collect_jsonl(path, &mut files)?;
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    files
        .into_iter()
        .map(|f| {
            let file = File::open(&f).map_err(|e| CliError::data(format!("{}: {e}", f.display())))?;
            let records =
                read_score_records(BufReader::new(file)).map_err(|e| CliError::from(e).context(f.display()))?;
            Ok((f, records))
        })
        .collect()
}

/// Score inputs may be a single file or a directory of `.jsonl` files.
fn require_path(key: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{key}: {} does not exist", path.display())))
    }
}

fn load_score_file(path: &Path) -> Result<ScoreFile> {
    let records = read_records(path)?.into_iter().flat_map(|(_, r)| r).collect();
    ScoreFile::from_records(records).map_err(|e| CliError::from(e).context(path.display()))
}

fn concat(corpora: &[Corpus]) -> Corpus {
    let ids: Vec<&str> = corpora.iter().map(|c| c.source_id()).collect();
    Corpus::new(
        ids.join("+"),
        corpora.iter().flat_map(|c| c.utterances().to_vec()).collect(),
    )
}

fn build_reference(cfg: &RunConfig, train: Option<&Corpus>) -> Result<Option<Box<dyn Scorer>>> {
    Ok(match cfg.reference.kind {
        ReferenceKind::None => None,
        ReferenceKind::Ngram => {
            let mut parts = Vec::new();
            for role in &cfg.reference.train_on {
                parts.push(match (role, train) {
                    (CorpusRole::Train, Some(t)) => t.clone(),
                    (CorpusRole::Train, None) => Corpus::load(&cfg.corpus.train)?,
                    (CorpusRole::Test, _) => Corpus::load(&cfg.corpus.test)?,
                });
            }
            let corpus = concat(&parts);
            info!(
                "training the reference {}-gram on {} tokens",
                cfg.reference.order,
                corpus.num_tokens()
            );
            let model = NgramTrainer::new(&corpus, cfg.reference.order, cfg.reference.smoothing())?.train_batch();
            Some(Box::new(model))
        }
        ReferenceKind::ScoreFile => {
            let path = cfg
                .reference
                .path
                .as_deref()
                .ok_or_else(|| CliError::usage("reference.path is required"))?;
            require_path("reference.path", path)?;
            Some(Box::new(ReferenceTable::load(path)?))
        }
    })
}

/// Scores all queries at one checkpoint, words in parallel, order kept.
fn export(
    run: &Run,
    model: &dyn Scorer,
    reference: Option<&dyn Scorer>,
    id: CheckpointId,
    queries: &Queries,
) -> Result<Vec<ScoreRecord>> {
    let per_word = run.install(|| {
        queries
            .par_iter()
            .map(|(_, qs)| export_records(model, reference, id, qs))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(per_word.into_iter().flatten().collect())
}

fn write_checkpoint(run: &Run, stamp: &stamp::Stamp, id: CheckpointId, records: &[ScoreRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_score_records(&mut buf, records).map_err(|e| CliError::data(format!("{id}: {e}")))?;
    stamp::write_text(&run.layout.score_file(id.seed, id.step), stamp, &buf)
}

/// Reports every query the score file cannot answer, not just the first.
fn check_coverage(file: &ScoreFile, seeds: &[u64], queries: &Queries) -> Result<()> {
    let mut missing: BTreeSet<(u64, u64, &str, String)> = BTreeSet::new();
    for id in file.checkpoints().into_iter().filter(|id| seeds.contains(&id.seed)) {
        let scorer = file.scorer(id).expect("listed checkpoint");
        let reference = scorer.reference();
        for (word, context) in queries.iter().flat_map(|(_, qs)| qs) {
            let mut probes = vec![scorer.log_prob_word(word, context)];
            if scorer.scores_context_prob() {
                probes.push(scorer.log_prob_context(context));
            }
            if let Some(r) = &reference {
                probes.push(r.log_prob_word(word, context));
            }
            for probe in probes {
                match probe {
                    Ok(_) => {}
                    Err(LmError::MissingTriple { .. }) => {
                        missing.insert((id.seed, id.step, word.as_str(), context_id(context)));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = missing
        .iter()
        .take(MISSING_SHOWN)
        .map(|(seed, step, word, ctx)| format!("  `{word}` in context {ctx} at step {step}, seed {seed}"))
        .collect();
    let more = missing.len() - shown.len();
    let tail = if more > 0 {
        format!("\n  ... and {more} more")
    } else {
        String::new()
    };
    Err(CliError::data(format!(
        "score file lacks {} required (word, context, checkpoint) scores:\n{}{tail}",
        missing.len(),
        shown.join("\n")
    )))
}

pub fn run_score(run: &Run) -> Result<ScoreSummary> {
    let cfg = &run.cfg;
    let stamp = run.stamp(Stage::Score)?;
    let (_, samples) = load_samples(run)?;
    let queries = queries(&samples);
    clear_dir(&run.layout.root().join("scores"))?;

    let mut manifest = ScoreManifest {
        steps: BTreeMap::new(),
        total_steps: BTreeMap::new(),
        reference: false,
        context_prob: false,
    };
    let mut records = 0usize;
    match cfg.backend.kind {
        BackendKind::Ngram => {
            RunConfig::require_files(&[("corpus.train", &cfg.corpus.train)])?;
            let train = Corpus::load(&cfg.corpus.train)?;
            let trainer = NgramTrainer::new(&train, cfg.backend.order, cfg.backend.smoothing())?;
            let total = trainer.total_positions();
            let schedule = if cfg.schedule.steps.is_empty() {
                geometric_schedule(total, cfg.schedule.checkpoints, cfg.schedule.first)
            } else {
                cfg.schedule.steps.clone()
            };
            validate_schedule(&schedule)?;
            if schedule.len() < cfg.schedule.checkpoints && cfg.schedule.steps.is_empty() {
                warn!(
                    "corpus too small for {} distinct checkpoints; using {}",
                    cfg.schedule.checkpoints,
                    schedule.len()
                );
            }
            let reference = build_reference(cfg, Some(&train))?;
            manifest.reference = reference.is_some();
            for &seed in &cfg.seeds {
                info!(
                    "training seed {seed} over {} checkpoints ({total} events)",
                    schedule.len()
                );
                trainer.for_each_checkpoint(&schedule, seed, |step, model| -> Result<()> {
                    manifest.context_prob = model.scores_context_prob();
                    let id = CheckpointId { step, seed };
                    let recs = export(run, model, reference.as_deref(), id, &queries)?;
                    records += recs.len();
                    write_checkpoint(run, &stamp, id, &recs)
                })?;
                manifest.steps.insert(seed, schedule.clone());
                manifest.total_steps.insert(seed, *schedule.last().expect("validated"));
            }
        }
        BackendKind::ScoreFile => {
            let path = cfg
                .backend
                .path
                .as_deref()
                .ok_or_else(|| CliError::usage("backend.path is required"))?;
            require_path("backend.path", path)?;
            let file = load_score_file(path)?;
            let missing: Vec<u64> = cfg
                .seeds
                .iter()
                .copied()
                .filter(|s| !file.seeds().contains(s))
                .collect();
            if !missing.is_empty() {
                return Err(CliError::data(format!(
                    "{} has no checkpoints for seeds {missing:?} (found {:?})",
                    path.display(),
                    file.seeds()
                )));
            }
            check_coverage(&file, &cfg.seeds, &queries)?;
            let external = build_reference(cfg, None)?;
            for &seed in &cfg.seeds {
                let series = file.series(seed)?;
                for (step, scorer) in &series.checkpoints {
                    if !scorer.scores_word_prob() {
                        return Err(CliError::Capability(format!(
                            "{}: step {step}, seed {seed} lacks log_q on some records",
                            path.display()
                        )));
                    }
                    let own = scorer.reference();
                    let reference: Option<&dyn Scorer> = match (&external, &own) {
                        (Some(r), _) => Some(r.as_ref()),
                        (None, Some(r)) => Some(r),
                        (None, None) => None,
                    };
                    manifest.reference = reference.is_some();
                    manifest.context_prob = scorer.scores_context_prob();
                    let id = CheckpointId { step: *step, seed };
                    let recs = export(run, scorer, reference, id, &queries)?;
                    records += recs.len();
                    write_checkpoint(run, &stamp, id, &recs)?;
                }
                manifest.steps.insert(seed, series.steps());
                manifest.total_steps.insert(seed, series.total_steps);
            }
        }
    }
    stamp::write_json(&run.layout.score_manifest(), &stamp, &manifest)?;
    let checkpoints = manifest.steps.values().map(Vec::len).sum();
    info!("wrote {records} score records over {checkpoints} checkpoints");
    Ok(ScoreSummary { checkpoints, records })
}

/// Reads the scores of one checkpoint written by [`run_score`].
pub(super) fn read_checkpoint(run: &Run, stamp: &stamp::Stamp, seed: u64, step: u64) -> Result<ScoreFile> {
    let path = run.layout.score_file(seed, step);
    let body = stamp::read_text(&path, stamp)?;
    ScoreFile::read(Cursor::new(body)).map_err(|e| CliError::from(e).context(path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_rejects_conflicts_and_answers_lookups() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = vec!["a".to_string()];
        let rec = |r: f64| ScoreRecord {
            word: "dog".into(),
            context_id: context_id(&ctx),
            step: 1,
            seed: 0,
            log_q: None,
            log_q_c: None,
            log_r: Some(r),
        };
        let path = dir.path().join("r.jsonl");
        let mut buf = Vec::new();
        write_score_records(&mut buf, &[rec(-1.0), rec(-1.0)]).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let table = ReferenceTable::load(&path).unwrap();
        assert_eq!(table.log_prob_word("dog", &ctx).unwrap(), -1.0);
        assert!(table.log_prob_word("cat", &ctx).is_err());

        let mut buf = Vec::new();
        write_score_records(&mut buf, &[rec(-1.0), rec(-2.0)]).unwrap();
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(ReferenceTable::load(&path).err().unwrap().exit_code(), 2);
    }
}
