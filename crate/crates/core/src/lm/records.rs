//! Score files: precomputed log-probabilities, one JSON record per
//! (word, context, checkpoint) triple, plus a `contexts.jsonl` sidecar that
//! maps context ids back to tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{word_tokens, CheckpointId, CheckpointSeries, LmError, Scorer};
use crate::corpus::context_id;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub word: String,
    pub context_id: String,
    pub step: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_q_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_r: Option<f64>,
}

impl ScoreRecord {
    pub fn checkpoint(&self) -> CheckpointId {
        CheckpointId {
            step: self.step,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.log_q.is_none() && self.log_r.is_none() {
            return Err("record carries neither log_q nor log_r".into());
        }
        for (name, v) in [("log_q", self.log_q), ("log_q_c", self.log_q_c), ("log_r", self.log_r)] {
            if let Some(v) = v {
                if v.is_nan() || v > 0.0 {
                    return Err(format!("{name} = {v} is not a log-probability"));
                }
            }
        }
        if self.word.trim().is_empty() {
            return Err("empty word".into());
        }
        Ok(())
    }
}

/// One line of the context sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub context_id: String,
    pub tokens: Vec<String>,
}

/// Writes each distinct context once, ordered by id.
pub fn write_context_sidecar<'a, W, I>(mut out: W, contexts: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a [String]>,
{
    let unique: BTreeMap<String, &[String]> = contexts.into_iter().map(|c| (context_id(c), c)).collect();
    for (id, tokens) in unique {
        let rec = ContextRecord {
            context_id: id,
            tokens: tokens.to_vec(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads the sidecar, checking that every id matches its tokens.
pub fn read_context_sidecar<R: BufRead>(reader: R) -> Result<BTreeMap<String, Vec<String>>, LmError> {
    let mut map = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fmt = |message: String| LmError::Format { line: i + 1, message };
        let rec: ContextRecord = serde_json::from_str(trimmed).map_err(|e| fmt(e.to_string()))?;
        let expected = context_id(&rec.tokens);
        if rec.context_id != expected {
            return Err(fmt(format!(
                "context id {} does not match its tokens ({expected})",
                rec.context_id
            )));
        }
        map.insert(rec.context_id, rec.tokens);
    }
    Ok(map)
}

pub fn write_score_records<W: Write>(mut out: W, records: &[ScoreRecord]) -> io::Result<()> {
    for rec in records {
        // JSON has no infinities; serde_json would silently write null.
        if [rec.log_q, rec.log_q_c, rec.log_r]
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("non-finite score for `{}` in {}", rec.word, rec.context_id),
            ));
        }
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses records, rejecting malformed lines and invalid values. Blank lines
/// and `#` header lines are skipped. Returns each record with its line number.
pub fn read_score_records<R: BufRead>(reader: R) -> Result<Vec<(usize, ScoreRecord)>, LmError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fmt = |message: String| LmError::Format { line: i + 1, message };
        let rec: ScoreRecord = serde_json::from_str(trimmed).map_err(|e| fmt(e.to_string()))?;
        rec.validate().map_err(fmt)?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    log_q: Option<f64>,
    log_r: Option<f64>,
}

#[derive(Debug, Default)]
struct Table {
    entries: HashMap<(String, String), Entry>,
    context_log_prob: HashMap<String, f64>,
    has_q: bool,
    has_q_c: bool,
    has_r: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum View {
    Model,
    Reference,
}

/// Scorer over the records of one checkpoint. The model view answers
/// `log_q` (and `log_q_c`); the reference view answers `log_r`.
#[derive(Debug, Clone)]
pub struct FileScorer {
    checkpoint: CheckpointId,
    table: Arc<Table>,
    view: View,
}

impl FileScorer {
    pub fn checkpoint(&self) -> CheckpointId {
        self.checkpoint
    }

    pub fn scores_word_prob(&self) -> bool {
        self.table.has_q
    }

    /// A capability holds only when every record of the checkpoint carries
    /// the field.
    pub fn has_reference(&self) -> bool {
        self.table.has_r
    }

    pub fn reference(&self) -> Option<FileScorer> {
        self.table.has_r.then(|| FileScorer {
            view: View::Reference,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.table.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.entries.is_empty()
    }

    fn missing(&self, word: &str, id: String) -> LmError {
        LmError::MissingTriple {
            word: word.to_owned(),
            context_id: id,
            step: self.checkpoint.step,
            seed: self.checkpoint.seed,
        }
    }
}

impl Scorer for FileScorer {
    fn log_prob_word(&self, word: &str, context: &[String]) -> Result<f64, LmError> {
        let (capable, what) = match self.view {
            View::Model => (self.table.has_q, "word probability (log_q)"),
            View::Reference => (self.table.has_r, "reference probability (log_r)"),
        };
        if !capable {
            return Err(LmError::CapabilityMissing(what.into()));
        }
        let id = context_id(context);
        let key = (word_tokens(word)?.join(" "), id);
        let entry = self
            .table
            .entries
            .get(&key)
            .ok_or_else(|| self.missing(word, key.1.clone()))?;
        let value = match self.view {
            View::Model => entry.log_q,
            View::Reference => entry.log_r,
        };
        value.ok_or_else(|| self.missing(word, key.1))
    }

    fn scores_context_prob(&self) -> bool {
        self.view == View::Model && self.table.has_q_c
    }

    fn log_prob_context(&self, context: &[String]) -> Result<f64, LmError> {
        if !self.scores_context_prob() {
            return Err(LmError::CapabilityMissing("context probability (log_q_c)".into()));
        }
        let id = context_id(context);
        self.table
            .context_log_prob
            .get(&id)
            .copied()
            .ok_or_else(|| self.missing("<context>", id))
    }
}

/// All checkpoints found in one or more score files.
#[derive(Debug, Clone, Default)]
pub struct ScoreFile {
    scorers: BTreeMap<CheckpointId, FileScorer>,
}

impl ScoreFile {
    /// Builds per-checkpoint scorers. `(line, record)` pairs are validated
    /// and duplicates rejected.
    pub fn from_records(records: Vec<(usize, ScoreRecord)>) -> Result<Self, LmError> {
        let mut tables: BTreeMap<CheckpointId, (Table, usize, [usize; 3])> = BTreeMap::new();
        for (line, rec) in records {
            let fmt = |message: String| LmError::Format { line, message };
            rec.validate().map_err(fmt)?;
            let (table, n, present) = tables.entry(rec.checkpoint()).or_default();
            *n += 1;
            present[0] += rec.log_q.is_some() as usize;
            present[1] += rec.log_q_c.is_some() as usize;
            present[2] += rec.log_r.is_some() as usize;
            if let Some(lc) = rec.log_q_c {
                match table.context_log_prob.get(&rec.context_id) {
                    Some(&prev) if (prev - lc).abs() > 1e-9 * prev.abs().max(1.0) => {
                        return Err(fmt(format!(
                            "log_q_c for context {} disagrees with an earlier record ({prev} vs {lc})",
                            rec.context_id
                        )));
                    }
                    Some(_) => {}
                    None => {
                        table.context_log_prob.insert(rec.context_id.clone(), lc);
                    }
                }
            }
            let word = word_tokens(&rec.word).map_err(|e| fmt(e.to_string()))?.join(" ");
            let key = (word, rec.context_id.clone());
            let entry = Entry {
                log_q: rec.log_q,
                log_r: rec.log_r,
            };
            if table.entries.insert(key, entry).is_some() {
                return Err(fmt(format!(
                    "duplicate record for `{}` in context {} at step {}, seed {}",
                    rec.word, rec.context_id, rec.step, rec.seed
                )));
            }
        }
        let scorers = tables
            .into_iter()
            .map(|(id, (mut table, n, present))| {
                table.has_q = present[0] == n;
                table.has_q_c = present[1] == n;
                table.has_r = present[2] == n;
                let scorer = FileScorer {
                    checkpoint: id,
                    table: Arc::new(table),
                    view: View::Model,
                };
                (id, scorer)
            })
            .collect();
        Ok(ScoreFile { scorers })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, LmError> {
        Self::from_records(read_score_records(reader)?)
    }

    pub fn checkpoints(&self) -> Vec<CheckpointId> {
        self.scorers.keys().copied().collect()
    }

    pub fn seeds(&self) -> BTreeSet<u64> {
        self.scorers.keys().map(|id| id.seed).collect()
    }

    pub fn scorer(&self, id: CheckpointId) -> Option<&FileScorer> {
        self.scorers.get(&id)
    }

    /// Checkpoints of one seed ordered by step.
    pub fn series(&self, seed: u64) -> Result<CheckpointSeries<FileScorer>, LmError> {
        let checkpoints = self
            .scorers
            .iter()
            .filter(|(id, _)| id.seed == seed)
            .map(|(id, s)| (id.step, s.clone()))
            .collect::<Vec<_>>();
        if checkpoints.is_empty() {
            return Err(LmError::InvalidArgument(format!("no checkpoints for seed {seed}")));
        }
        CheckpointSeries::new(seed, checkpoints)
    }
}

/// Loads a score file into one scorer per checkpoint.
pub fn load_score_records(path: &Path) -> Result<ScoreFile, LmError> {
    ScoreFile::read(BufReader::new(File::open(path)?))
}

/// Scores every (word, context) query against `model` (and `reference`, if
/// given) and packages the results as records for `checkpoint`. Repeated
/// queries are scored once.
pub fn export_records(
    model: &dyn Scorer,
    reference: Option<&dyn Scorer>,
    checkpoint: CheckpointId,
    queries: &[(String, Vec<String>)],
) -> Result<Vec<ScoreRecord>, LmError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(queries.len());
    let with_context = model.scores_context_prob();
    for (word, context) in queries {
        let id = context_id(context);
        if !seen.insert((word.clone(), id.clone())) {
            continue;
        }
        out.push(ScoreRecord {
            word: word.clone(),
            context_id: id,
            step: checkpoint.step,
            seed: checkpoint.seed,
            log_q: Some(model.log_prob_word(word, context)?),
            log_q_c: if with_context {
                Some(model.log_prob_context(context)?)
            } else {
                None
            },
            log_r: reference.map(|r| r.log_prob_word(word, context)).transpose()?,
        });
    }
    Ok(out)
}
