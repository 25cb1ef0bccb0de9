use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use lexsig::analysis::{
    align, correlation_matrix, mad_filter, pearson, predictor_suite, render_suite_table, spearman, CorrelationMatrix,
    PredictorSuite, VIF_LIMIT,
};
use lexsig::corpus::{count_frequencies, LexicalCategory, WordFeatures};
use lexsig::trajectory::{aggregate_seeds, read_aggregate_csv, read_aoa_csv, AggregateAoA, Trajectory};
use lexsig::wordbank::{child_aoa_table, load_wordbank};
use lexsig::{Corpus, Family, Polarity, SignatureKind};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::aoa::read_trajectories;
use super::{clear_dir, csv_bytes, Run};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::stamp::{self, Stage, Stamp};
use crate::svg;

/// Label of the child AoA vector in correlation and regression outputs.
pub const CHILDREN: &str = "children";

/// Tolerance for calling a smoothed trajectory monotone.
const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub words: usize,
    pub child_words: Option<usize>,
    pub regressions: usize,
    pub regression_errors: usize,
}

#[derive(Debug, Deserialize)]
struct FeatureRow {
    word: String,
    #[serde(default)]
    concreteness: Option<f64>,
    #[serde(default)]
    lexical_category: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NonconvergenceRow {
    family: Family,
    polarity: Polarity,
    epsilon: f64,
    words: usize,
    nonconverged: usize,
    fraction_nonconverged: f64,
}

#[derive(Debug, Serialize)]
struct RegressionRow {
    label: String,
    outliers: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    suite: Option<PredictorSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

type WordValues = BTreeMap<String, f64>;

/// External norms: concreteness and category per word.
fn read_feature_norms(path: &Path) -> Result<BTreeMap<String, FeatureRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.deserialize::<FeatureRow>().enumerate() {
        let row = row.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if let Some(c) = row.concreteness {
            if !(1.0..=5.0).contains(&c) {
                return Err(CliError::data(format!(
                    "{}: row {}: concreteness {c} outside [1, 5]",
                    path.display(),
                    i + 2
                )));
            }
        }
        out.insert(row.word.clone(), row);
    }
    Ok(out)
}

fn build_features(
    cfg: &RunConfig,
    words: &BTreeSet<String>,
    wordbank_categories: &BTreeMap<String, LexicalCategory>,
) -> Result<BTreeMap<String, WordFeatures>> {
    RunConfig::require_files(&[("corpus.train", &cfg.corpus.train)])?;
    let train = Corpus::load(&cfg.corpus.train)?;
    let counts = count_frequencies(&train);
    let norms = match &cfg.analysis.features {
        Some(p) => {
            RunConfig::require_files(&[("analysis.features", p)])?;
            read_feature_norms(p)?
        }
        None => BTreeMap::new(),
    };
    Ok(words
        .iter()
        .map(|w| {
            let mut f = WordFeatures::from_corpus(&train, &counts, w);
            let norm = norms.get(w);
            f.concreteness = norm.and_then(|n| n.concreteness);
            f.lexical_category = norm
                .and_then(|n| n.lexical_category.as_deref())
                .map(LexicalCategory::parse_lenient)
                .or_else(|| wordbank_categories.get(w).copied())
                .unwrap_or(LexicalCategory::Other);
            (w.clone(), f)
        })
        .collect())
}

fn features_csv(features: &BTreeMap<String, WordFeatures>) -> Result<Vec<u8>> {
    csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "word",
            "count",
            "log_frequency",
            "mlu",
            "n_chars",
            "concreteness",
            "lexical_category",
        ])?;
        for f in features.values() {
            w.write_record([
                f.word.clone(),
                f.count.to_string(),
                f.log_frequency.to_string(),
                f.mlu.map(|m| m.to_string()).unwrap_or_default(),
                f.n_chars.to_string(),
                f.concreteness.map(|c| c.to_string()).unwrap_or_default(),
                f.lexical_category.as_str().to_owned(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Per-kind word → AoA maps from aggregate rows.
fn by_kind(rows: &[AggregateAoA]) -> BTreeMap<SignatureKind, WordValues> {
    let mut out: BTreeMap<SignatureKind, WordValues> = BTreeMap::new();
    for r in rows {
        out.entry(SignatureKind::new(r.family, r.polarity))
            .or_default()
            .insert(r.word.clone(), r.aoa_normalized);
    }
    out
}

/// True when the trajectory never changes direction, up to a tolerance.
pub fn is_monotone(values: &[f64]) -> bool {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.iter().all(|&d| d <= MONOTONE_TOL) || diffs.iter().all(|&d| d >= -MONOTONE_TOL)
}

fn monotone_csv(smoothed: &[Trajectory]) -> Result<Vec<u8>> {
    let mut tally: BTreeMap<SignatureKind, (usize, usize)> = BTreeMap::new();
    for t in smoothed {
        let e = tally.entry(t.kind).or_default();
        e.0 += 1;
        e.1 += usize::from(is_monotone(&t.values()));
    }
    csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "family",
            "polarity",
            "symbol",
            "trajectories",
            "monotone",
            "fraction_monotone",
        ])?;
        for (kind, (n, m)) in &tally {
            w.write_record([
                kind.family.as_str(),
                kind.polarity.as_signature_str(),
                &kind.symbol(),
                &n.to_string(),
                &m.to_string(),
                &(*m as f64 / *n as f64).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn matrix_svg(title: &str, m: &CorrelationMatrix, display: impl Fn(&str) -> String) -> String {
    let names: Vec<String> = m.names.iter().map(|n| display(n)).collect();
    svg::heatmap(title, &names, &m.r)
}

fn kind_display(label: &str) -> String {
    label
        .parse::<SignatureKind>()
        .map(|k| k.symbol())
        .unwrap_or_else(|_| label.to_owned())
}

struct Reporter<'a> {
    run: &'a Run,
    stamp: Stamp,
}

impl Reporter<'_> {
    fn text(&self, name: &str, body: &[u8]) -> Result<()> {
        stamp::write_text(&self.run.layout.report(name), &self.stamp, body)
    }

    fn svg(&self, name: &str, svg: &str) -> Result<()> {
        stamp::write_svg(&self.run.layout.report(name), &self.stamp, svg)
    }
}

pub fn run_analyze(run: &Run) -> Result<AnalyzeSummary> {
    let cfg = &run.cfg;
    let acfg = &cfg.analysis;
    let predictors = acfg.predictors()?;
    let aoa_stamp = run.stamp(Stage::Aoa)?;
    let layout = &run.layout;
    let read_table = |path: std::path::PathBuf| -> Result<String> { stamp::read_text(&path, &aoa_stamp) };
    let aggregate = read_aggregate_csv(Cursor::new(read_table(layout.aggregate())?))
        .map_err(|e| CliError::from(e).context(layout.aggregate().display()))?;
    let sweep = read_aoa_csv(Cursor::new(read_table(layout.aoa_sweep())?))
        .map_err(|e| CliError::from(e).context(layout.aoa_sweep().display()))?;
    let nonconvergence: Vec<NonconvergenceRow> = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(Cursor::new(read_table(layout.nonconvergence())?))
        .deserialize()
        .collect::<Result<_, _>>()?;
    let (_, smoothed) = read_trajectories(run)?;
    let model_aoa = by_kind(&aggregate);

    let (child, categories) = match &acfg.wordbank {
        Some(path) => {
            RunConfig::require_files(&[("analysis.wordbank", path)])?;
            if let Some(ex) = &acfg.exclusions {
                RunConfig::require_files(&[("analysis.exclusions", ex)])?;
            }
            let wb = load_wordbank(path, acfg.exclusions.as_deref())?;
            if !wb.excluded.is_empty() {
                info!("wordbank: excluded {} listed words", wb.excluded.len());
            }
            let (aoa, never) = child_aoa_table(&wb.table, acfg.threshold, acfg.interpolate)?;
            if !never.is_empty() {
                warn!(
                    "{} wordbank words never reach proportion {}",
                    never.len(),
                    acfg.threshold
                );
            }
            (Some(aoa), wb.categories())
        }
        None => {
            warn!("no wordbank configured; skipping child comparisons");
            (None, BTreeMap::new())
        }
    };

    let mut words: BTreeSet<String> = aggregate.iter().map(|r| r.word.clone()).collect();
    if let Some(c) = &child {
        words.extend(c.keys().cloned());
    }
    let features = build_features(cfg, &words, &categories)?;

    let report = Reporter {
        run,
        stamp: run.stamp(Stage::Analyze)?,
    };
    clear_dir(&layout.root().join("report"))?;
    report.text("features.csv", &features_csv(&features)?)?;

    if let Some(child) = &child {
        report.text(
            "child_aoa.csv",
            &csv_bytes(|b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["word", "child_aoa_months"])?;
                for (word, v) in child {
                    w.write_record([word.as_str(), &v.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?,
        )?;

        let mut rows = Vec::new();
        for (kind, aoa) in &model_aoa {
            let (_, x, y) = align(child, aoa);
            let r = pearson(&x, &y).ok();
            rows.push((*kind, x.len(), r));
        }
        report.text(
            "child_correlation.csv",
            &csv_bytes(|b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["family", "polarity", "symbol", "n", "pearson"])?;
                for (kind, n, r) in &rows {
                    w.write_record([
                        kind.family.as_str(),
                        kind.polarity.as_signature_str(),
                        &kind.symbol(),
                        &n.to_string(),
                        &fmt_opt(*r),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?,
        )?;
        let bars: Vec<(String, Option<f64>)> = rows.iter().map(|(k, _, r)| (k.symbol(), *r)).collect();
        report.svg(
            "child_correlation.svg",
            &svg::bar_chart("Pearson r, child vs model AoA", &bars),
        )?;
    }

    let mut vectors: Vec<(String, WordValues)> = Vec::new();
    if let Some(c) = &child {
        vectors.push((CHILDREN.to_owned(), c.clone()));
    }
    vectors.extend(model_aoa.iter().map(|(k, v)| (k.label(), v.clone())));
    let matrix = correlation_matrix(&vectors);
    report.text("signature_correlation.csv", &csv_bytes(|b| matrix.write_csv(b))?)?;
    report.svg(
        "signature_correlation.svg",
        &matrix_svg("AoA correlation between signatures", &matrix, kind_display),
    )?;

    let mut freq_rows = Vec::new();
    let log_freq: WordValues = features
        .values()
        .filter(|f| f.log_frequency.is_finite())
        .map(|f| (f.word.clone(), f.log_frequency))
        .collect();
    for (kind, aoa) in &model_aoa {
        let (_, x, y) = align(&log_freq, aoa);
        freq_rows.push((*kind, x.len(), spearman(&x, &y).ok()));
    }
    report.text(
        "frequency_correlation.csv",
        &csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["family", "polarity", "symbol", "n", "spearman_log_frequency"])?;
            for (kind, n, r) in &freq_rows {
                w.write_record([
                    kind.family.as_str(),
                    kind.polarity.as_signature_str(),
                    &kind.symbol(),
                    &n.to_string(),
                    &fmt_opt(*r),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?,
    )?;

    let mut sweep_by_kind: BTreeMap<SignatureKind, Vec<_>> = BTreeMap::new();
    for r in sweep {
        sweep_by_kind.entry(r.kind()).or_default().push(r);
    }
    for (kind, results) in &sweep_by_kind {
        let agg = aggregate_seeds(results);
        let mut per_eps: BTreeMap<u64, WordValues> = BTreeMap::new();
        for r in &agg.rows {
            per_eps
                .entry(r.epsilon.to_bits())
                .or_default()
                .insert(r.word.clone(), r.aoa_normalized);
        }
        let mut vecs: Vec<(f64, WordValues)> = per_eps.into_iter().map(|(e, v)| (f64::from_bits(e), v)).collect();
        vecs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let m = correlation_matrix(&vecs.into_iter().map(|(e, v)| (e.to_string(), v)).collect::<Vec<_>>());
        stamp::write_text(
            &layout.epsilon_correlation(*kind, "csv"),
            &report.stamp,
            &csv_bytes(|b| m.write_csv(b))?,
        )?;
        let title = format!("{}: AoA correlation across epsilon", kind.symbol());
        stamp::write_svg(
            &layout.epsilon_correlation(*kind, "svg"),
            &report.stamp,
            &matrix_svg(&title, &m, |n| n.to_owned()),
        )?;
    }

    report.text(
        "nonconvergence.csv",
        &csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record([
                "family",
                "polarity",
                "symbol",
                "epsilon",
                "words",
                "nonconverged",
                "percent_nonconverged",
            ])?;
            for r in &nonconvergence {
                let kind = SignatureKind::new(r.family, r.polarity);
                w.write_record([
                    r.family.as_str(),
                    r.polarity.as_signature_str(),
                    &kind.symbol(),
                    &r.epsilon.to_string(),
                    &r.words.to_string(),
                    &r.nonconverged.to_string(),
                    &(100.0 * r.fraction_nonconverged).to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?,
    )?;
    let mut eps: Vec<f64> = nonconvergence.iter().map(|r| r.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let mut series: BTreeMap<SignatureKind, Vec<f64>> = BTreeMap::new();
    for e in &eps {
        for r in nonconvergence.iter().filter(|r| r.epsilon == *e) {
            series
                .entry(SignatureKind::new(r.family, r.polarity))
                .or_default()
                .push(r.fraction_nonconverged);
        }
    }
    let series: Vec<(String, Vec<f64>)> = series.into_iter().map(|(k, v)| (k.symbol(), v)).collect();
    report.svg(
        "nonconvergence.svg",
        &svg::line_chart("Fraction of words not converged", "epsilon", &eps, &series),
    )?;

    report.text("monotone.csv", &monotone_csv(&smoothed)?)?;

    let n = acfg.first_last_n;
    report.text(
        "first_last.csv",
        &csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["family", "polarity", "symbol", "list", "rank", "word", "aoa_normalized"])?;
            for (kind, aoa) in &model_aoa {
                let mut ordered: Vec<(&String, f64)> = aoa.iter().map(|(w, &v)| (w, v)).collect();
                ordered.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
                let first = ordered.iter().take(n);
                let last = ordered.iter().rev().take(n);
                for (list, items) in [("first", first.collect::<Vec<_>>()), ("last", last.collect())] {
                    for (rank, (word, v)) in items.into_iter().enumerate() {
                        w.write_record([
                            kind.family.as_str(),
                            kind.polarity.as_signature_str(),
                            &kind.symbol(),
                            list,
                            &(rank + 1).to_string(),
                            word.as_str(),
                            &v.to_string(),
                        ])?;
                    }
                }
            }
            w.flush()?;
            Ok(())
        })?,
    )?;

    let mut regressions = Vec::new();
    for (label, aoa) in &vectors {
        let (kept, outliers) = if acfg.mad_cutoff > 0.0 {
            mad_filter(aoa, acfg.mad_cutoff)
        } else {
            (aoa.clone(), Vec::new())
        };
        let display = kind_display(label);
        let row = match predictor_suite(&display, &kept, &features, &predictors) {
            Ok(suite) => RegressionRow {
                label: label.clone(),
                outliers,
                suite: Some(suite),
                error: None,
            },
            Err(e) => {
                warn!("regression for {display}: {e}");
                RegressionRow {
                    label: label.clone(),
                    outliers,
                    suite: None,
                    error: Some(e.to_string()),
                }
            }
        };
        regressions.push(row);
    }
    stamp::write_json(&layout.report("regression.json"), &report.stamp, &regressions)?;
    let suites: Vec<PredictorSuite> = regressions.iter().filter_map(|r| r.suite.clone()).collect();
    let mut text = String::from("Adjusted R² by predictor set\n\n");
    text.push_str(&render_suite_table(&suites));
    text.push('\n');
    for s in &suites {
        let worst = s.full_report.vif.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        let verdict = if s.full_report.vif_ok() { "ok" } else { "FAILED" };
        text.push_str(&format!(
            "{}: max VIF {worst:.2} (limit {VIF_LIMIT}) {verdict}; {} outliers removed\n",
            s.label,
            regressions
                .iter()
                .find(|r| r.suite.as_ref() == Some(s))
                .map_or(0, |r| r.outliers.len())
        ));
    }
    for r in regressions.iter().filter(|r| r.error.is_some()) {
        text.push_str(&format!(
            "{}: not fitted ({})\n",
            kind_display(&r.label),
            r.error.as_deref().unwrap_or("")
        ));
    }
    report.text("regression.txt", text.as_bytes())?;

    let errors = regressions.iter().filter(|r| r.error.is_some()).count();
    info!("report written to {}", layout.report("").display());
    Ok(AnalyzeSummary {
        words: words.len(),
        child_words: child.as_ref().map(BTreeMap::len),
        regressions: regressions.len(),
        regression_errors: errors,
    })
}
