use std::collections::BTreeMap;

use lexsig::lm::{CheckpointId, Scorer};
use lexsig::signatures::{signature_suite, write_intrinsic_diagnostics, write_signatures_csv, SignatureValue};
use lexsig::SignatureKind;
use log::{info, warn};
use rayon::prelude::*;

use super::score::read_checkpoint;
use super::{clear_dir, csv_bytes, load_samples, Run, ScoreManifest};
use crate::error::{CliError, Result};
use crate::stamp::{self, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct SignaturesSummary {
    pub values: usize,
    /// Enabled kinds the backends could not compute, with the reason.
    pub skipped: Vec<(SignatureKind, String)>,
}

pub fn run_signatures(run: &Run) -> Result<SignaturesSummary> {
    let cfg = &run.cfg;
    let kinds = cfg.signatures.kinds()?;
    let score_stamp = run.stamp(Stage::Score)?;
    let stamp = run.stamp(Stage::Signatures)?;
    let (_, samples) = load_samples(run)?;
    let manifest: ScoreManifest = stamp::read_json(&run.layout.score_manifest(), &score_stamp)?;

    let mut values: Vec<SignatureValue> = Vec::new();
    let mut skipped: BTreeMap<SignatureKind, String> = BTreeMap::new();
    let mut dropped: BTreeMap<(SignatureKind, String, u64, u64), usize> = BTreeMap::new();
    for (&seed, steps) in &manifest.steps {
        info!("computing signatures for seed {seed}");
        for &step in steps {
            let file = read_checkpoint(run, &score_stamp, seed, step)?;
            let id = CheckpointId { step, seed };
            let model = file
                .scorer(id)
                .ok_or_else(|| CliError::data(format!("score file for {id} holds other checkpoints")))?;
            let reference = model.reference();
            let reference = reference.as_ref().map(|r| r as &dyn Scorer);
            let suites = run.install(|| {
                samples
                    .par_iter()
                    .map(|(word, by_pol)| {
                        signature_suite(word, by_pol, model, reference, id, cfg.signatures.frequency_weighted)
                            .map_err(|e| CliError::from(e).context(format!("`{word}` at {id}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for (word, suite) in samples.keys().zip(suites) {
                values.extend(suite.values.into_iter().filter(|v| kinds.contains(&v.kind())));
                for (kind, reason) in suite.skipped {
                    if kinds.contains(&kind) {
                        skipped.entry(kind).or_insert(reason);
                    }
                }
                for (kind, n) in suite.dropped {
                    if kinds.contains(&kind) {
                        dropped.insert((kind, word.clone(), seed, step), n);
                    }
                }
            }
        }
    }
    for (kind, reason) in &skipped {
        warn!("skipping {kind}: {reason}");
    }
    if values.is_empty() {
        return Err(CliError::Capability(format!(
            "none of the enabled signatures can be computed: {}",
            skipped
                .iter()
                .map(|(k, r)| format!("{k} ({r})"))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    values.sort_by(|a, b| (&a.word, a.kind(), a.seed, a.step).cmp(&(&b.word, b.kind(), b.seed, b.step)));

    clear_dir(&run.layout.root().join("signatures"))?;
    let layout = &run.layout;
    stamp::write_text(
        &layout.signatures(),
        &stamp,
        &csv_bytes(|b| write_signatures_csv(b, &values))?,
    )?;
    stamp::write_text(
        &layout.intrinsic_diagnostics(),
        &stamp,
        &csv_bytes(|b| write_intrinsic_diagnostics(b, &values))?,
    )?;
    let skipped_csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["family", "polarity", "reason"])?;
        for (kind, reason) in &skipped {
            w.write_record([kind.family.as_str(), kind.polarity.as_signature_str(), reason])?;
        }
        w.flush()?;
        Ok(())
    })?;
    stamp::write_text(&layout.skipped_kinds(), &stamp, &skipped_csv)?;
    let dropped_csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["word", "family", "polarity", "seed", "step", "dropped"])?;
        for ((kind, word, seed, step), n) in &dropped {
            w.write_record([
                word.as_str(),
                kind.family.as_str(),
                kind.polarity.as_signature_str(),
                &seed.to_string(),
                &step.to_string(),
                &n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    stamp::write_text(&layout.dropped_contexts(), &stamp, &dropped_csv)?;
    info!("wrote {} signature values", values.len());
    Ok(SignaturesSummary {
        values: values.len(),
        skipped: skipped.into_iter().collect(),
    })
}
