//! Correlations, least-squares regression and collinearity diagnostics for
//! comparing model AoA with child AoA and word-level predictors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{LexicalCategory, WordFeatures};

pub const VIF_LIMIT: f64 = 5.0;
pub const MIN_SUITE_WORDS: usize = 30;
pub const DEFAULT_MAD_CUTOFF: f64 = 3.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("a vector has zero variance")]
    DegenerateVariance,
    #[error("design is rank deficient (column `{0}`)")]
    RankDeficient(String),
    #[error("{n} observations cannot support {columns} columns plus an intercept")]
    InsufficientData { n: usize, columns: usize },
    #[error("{0}")]
    Design(String),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFewPoints { need: 3, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Aligns two word-keyed vectors on their shared words.
pub fn align(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let mut words = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (w, &x) in a {
        if let Some(&y) = b.get(w) {
            words.push(w.clone());
            xs.push(x);
            ys.push(y);
        }
    }
    (words, xs, ys)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// `None` where the pair shares fewer than 3 words or a side is constant.
    pub r: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.r[i][j]
    }

    /// CSV with a header row and a leading name column; absent cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.r) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairwise Pearson correlations over the words each pair shares.
pub fn correlation_matrix(vectors: &[(String, BTreeMap<String, f64>)]) -> CorrelationMatrix {
    let k = vectors.len();
    let mut r = vec![vec![None; k]; k];
    let mut n = vec![vec![0; k]; k];
    for i in 0..k {
        n[i][i] = vectors[i].1.len();
        r[i][i] = Some(1.0);
        for j in i + 1..k {
            let (words, x, y) = align(&vectors[i].1, &vectors[j].1);
            let v = pearson(&x, &y).ok();
            r[i][j] = v;
            r[j][i] = v;
            n[i][j] = words.len();
            n[j][i] = words.len();
        }
    }
    CorrelationMatrix {
        names: vectors.iter().map(|v| v.0.clone()).collect(),
        r,
        n,
    }
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
#[allow(clippy::excessive_precision)]
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Predictor columns over a set of words, with an AoA response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub words: Vec<String>,
    pub response: Vec<f64>,
    pub columns: Vec<String>,
    /// Column-major values, one vector per column.
    pub values: Vec<Vec<f64>>,
    pub indicator: Vec<bool>,
    /// Words dropped while building the design, with the reason.
    pub dropped: Vec<(String, String)>,
}

impl DesignMatrix {
    pub fn new(words: Vec<String>, response: Vec<f64>) -> Result<Self, AnalysisError> {
        if words.len() != response.len() {
            return Err(AnalysisError::LengthMismatch(words.len(), response.len()));
        }
        Ok(DesignMatrix {
            words,
            response,
            columns: Vec::new(),
            values: Vec::new(),
            indicator: Vec::new(),
            dropped: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.words.len()
    }

    pub fn add_column(&mut self, name: &str, values: Vec<f64>, indicator: bool) -> Result<(), AnalysisError> {
        if values.len() != self.n() {
            return Err(AnalysisError::LengthMismatch(self.n(), values.len()));
        }
        if self.columns.iter().any(|c| c == name) {
            return Err(AnalysisError::Design(format!("duplicate column `{name}`")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::Design(format!("column `{name}` has non-finite values")));
        }
        self.columns.push(name.to_owned());
        self.values.push(values);
        self.indicator.push(indicator);
        Ok(())
    }

    /// Design with only the named columns (same rows).
    pub fn select(&self, names: &[&str]) -> Result<Self, AnalysisError> {
        let mut out = DesignMatrix::new(self.words.clone(), self.response.clone())?;
        out.dropped = self.dropped.clone();
        for name in names {
            let j = self
                .columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| AnalysisError::Design(format!("no column `{name}`")))?;
            out.add_column(name, self.values[j].clone(), self.indicator[j])?;
        }
        Ok(out)
    }

    /// Rescales every continuous column to mean 0, sd 1.
    pub fn standardize(&mut self) {
        for (col, &ind) in self.values.iter_mut().zip(&self.indicator) {
            if ind || col.len() < 2 {
                continue;
            }
            let m = mean(col);
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
            if sd > 0.0 {
                col.iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
        }
    }

    fn with_intercept(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.columns.len() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                self.values[j - 1][i]
            }
        })
    }
}

/// Word-level predictors used in the regression suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    LogFrequency,
    Mlu,
    NChars,
    Concreteness,
    LexicalCategory,
}

impl Predictor {
    pub const ALL: [Predictor; 5] = [
        Predictor::LogFrequency,
        Predictor::Mlu,
        Predictor::NChars,
        Predictor::Concreteness,
        Predictor::LexicalCategory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predictor::LogFrequency => "log_frequency",
            Predictor::Mlu => "mlu",
            Predictor::NChars => "n_chars",
            Predictor::Concreteness => "concreteness",
            Predictor::LexicalCategory => "lexical_category",
        }
    }

    /// Design columns the predictor expands to. Categories are coded
    /// against function words.
    pub fn columns(self) -> Vec<&'static str> {
        match self {
            Predictor::LexicalCategory => vec!["noun", "predicate"],
            other => vec![other.name()],
        }
    }

    fn value(self, f: &WordFeatures) -> Result<Vec<f64>, &'static str> {
        let finite = |v: f64, why| if v.is_finite() { Ok(vec![v]) } else { Err(why) };
        match self {
            Predictor::LogFrequency => finite(f.log_frequency, "absent from corpus"),
            Predictor::Mlu => f.mlu.map(|m| vec![m]).ok_or("no utterances for MLU"),
            Predictor::NChars => Ok(vec![f.n_chars as f64]),
            Predictor::Concreteness => f.concreteness.map(|c| vec![c]).ok_or("no concreteness rating"),
            Predictor::LexicalCategory => match f.lexical_category {
                LexicalCategory::Noun => Ok(vec![1.0, 0.0]),
                LexicalCategory::Predicate => Ok(vec![0.0, 1.0]),
                LexicalCategory::FunctionWord => Ok(vec![0.0, 0.0]),
                LexicalCategory::Other => Err("category other"),
            },
        }
    }
}

impl std::str::FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Predictor::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown predictor `{s}`"))
    }
}

/// Complete-case design over the words present in both `aoa` and
/// `features`. Words lacking any requested predictor are dropped.
pub fn design_from_features(
    aoa: &BTreeMap<String, f64>,
    features: &BTreeMap<String, WordFeatures>,
    predictors: &[Predictor],
) -> Result<DesignMatrix, AnalysisError> {
    let mut words = Vec::new();
    let mut response = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    'word: for (word, &y) in aoa {
        let Some(f) = features.get(word) else {
            dropped.push((word.clone(), "no features".to_owned()));
            continue;
        };
        let mut row = Vec::new();
        for p in predictors {
            match p.value(f) {
                Ok(v) => row.extend(v),
                Err(why) => {
                    dropped.push((word.clone(), why.to_owned()));
                    continue 'word;
                }
            }
        }
        words.push(word.clone());
        response.push(y);
        rows.push(row);
    }
    let mut design = DesignMatrix::new(words, response)?;
    design.dropped = dropped;
    let mut j = 0;
    for p in predictors {
        let ind = *p == Predictor::LexicalCategory;
        for name in p.columns() {
            design.add_column(name, rows.iter().map(|r| r[j]).collect(), ind)?;
            j += 1;
        }
    }
    Ok(design)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub n: usize,
    pub predictors: usize,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residuals: Vec<f64>,
    pub dropped: Vec<(String, String)>,
    pub vif: Vec<(String, f64)>,
}

impl RegressionReport {
    pub fn vif_ok(&self) -> bool {
        self.vif.iter().all(|(_, v)| *v <= VIF_LIMIT)
    }
}

struct Fit {
    beta: DVector<f64>,
    residuals: DVector<f64>,
    r_inv: DMatrix<f64>,
    r_squared: f64,
}

fn least_squares(design: &DesignMatrix) -> Result<Fit, AnalysisError> {
    let (n, k) = (design.n(), design.columns.len() + 1);
    if n <= k {
        return Err(AnalysisError::InsufficientData {
            n,
            columns: design.columns.len(),
        });
    }
    let x = design.with_intercept();
    let y = DVector::from_column_slice(&design.response);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale.max(1.0) {
            let name = if j == 0 {
                "(intercept)".to_owned()
            } else {
                design.columns[j - 1].clone()
            };
            return Err(AnalysisError::RankDeficient(name));
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| AnalysisError::RankDeficient("(triangular solve)".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| AnalysisError::RankDeficient("(triangular solve)".into()))?;
    let residuals = &y - &x * &beta;
    let ym = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let rss = residuals.norm_squared();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).max(0.0) } else { 0.0 };
    Ok(Fit {
        beta,
        residuals,
        r_inv,
        r_squared,
    })
}

pub fn adjusted_r_squared(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0)
}

/// Ordinary least squares with an intercept, solved by QR.
pub fn ols_fit(design: &DesignMatrix) -> Result<RegressionReport, AnalysisError> {
    let fit = least_squares(design)?;
    let (n, p) = (design.n(), design.columns.len());
    let df = (n - p - 1) as f64;
    let sigma2 = fit.residuals.norm_squared() / df;
    let cov_diag: Vec<f64> = (0..=p).map(|i| fit.r_inv.row(i).norm_squared() * sigma2).collect();
    let names = std::iter::once("(intercept)".to_owned()).chain(design.columns.iter().cloned());
    let coefficients = names
        .enumerate()
        .map(|(i, name)| {
            let est = fit.beta[i];
            let se = cov_diag[i].sqrt();
            let t = if se > 0.0 {
                est / se
            } else if est == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(est)
            };
            Coefficient {
                name,
                estimate: est,
                std_error: se,
                t_value: t,
                p_value: t_test_p_value(t, df),
            }
        })
        .collect();
    let continuous = design.indicator.iter().filter(|i| !**i).count();
    let vif = if continuous >= 2 { vif(design)? } else { Vec::new() };
    Ok(RegressionReport {
        n,
        predictors: p,
        coefficients,
        r_squared: fit.r_squared,
        adj_r_squared: adjusted_r_squared(fit.r_squared, n, p),
        residuals: fit.residuals.iter().copied().collect(),
        dropped: design.dropped.clone(),
        vif,
    })
}

/// Variance inflation factor of each continuous column, regressing it on
/// all other columns.
pub fn vif(design: &DesignMatrix) -> Result<Vec<(String, f64)>, AnalysisError> {
    let continuous: Vec<usize> = (0..design.columns.len()).filter(|&j| !design.indicator[j]).collect();
    if continuous.len() < 2 {
        return Err(AnalysisError::Design(
            "VIF needs at least two continuous columns".into(),
        ));
    }
    // The full design must itself be of full rank.
    least_squares(design)?;
    continuous
        .into_iter()
        .map(|j| {
            let mut sub = DesignMatrix::new(design.words.clone(), design.values[j].clone())?;
            for (k, name) in design.columns.iter().enumerate() {
                if k != j {
                    sub.add_column(name, design.values[k].clone(), design.indicator[k])?;
                }
            }
            let r2 = least_squares(&sub)?.r_squared;
            Ok((design.columns[j].clone(), 1.0 / (1.0 - r2)))
        })
        .collect()
}

/// Drops entries more than `cutoff` median absolute deviations from the
/// median. Nothing is dropped when the MAD is zero.
pub fn mad_filter(values: &BTreeMap<String, f64>, cutoff: f64) -> (BTreeMap<String, f64>, Vec<String>) {
    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    if values.is_empty() {
        return (BTreeMap::new(), Vec::new());
    }
    let med = median(&mut values.values().copied().collect());
    let mad = median(&mut values.values().map(|v| (v - med).abs()).collect());
    if mad == 0.0 {
        return (values.clone(), Vec::new());
    }
    let mut kept = BTreeMap::new();
    let mut removed = Vec::new();
    for (w, &v) in values {
        if (v - med).abs() > cutoff * mad {
            removed.push(w.clone());
        } else {
            kept.insert(w.clone(), v);
        }
    }
    (kept, removed)
}

/// One row of the predictor table: single-predictor fits, the full model
/// and the full model without log frequency, all on one word subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorSuite {
    pub label: String,
    pub n: usize,
    pub single: Vec<(String, f64)>,
    pub full: f64,
    pub full_without_log_frequency: Option<f64>,
    pub full_report: RegressionReport,
}

pub fn predictor_suite(
    label: &str,
    aoa: &BTreeMap<String, f64>,
    features: &BTreeMap<String, WordFeatures>,
    predictors: &[Predictor],
) -> Result<PredictorSuite, AnalysisError> {
    let unique: BTreeSet<_> = predictors.iter().collect();
    if unique.len() != predictors.len() || predictors.is_empty() {
        return Err(AnalysisError::Design(
            "predictors must be non-empty and distinct".into(),
        ));
    }
    let design = design_from_features(aoa, features, predictors)?;
    if design.n() < MIN_SUITE_WORDS {
        return Err(AnalysisError::TooFewPoints {
            need: MIN_SUITE_WORDS,
            got: design.n(),
        });
    }
    let single = predictors
        .iter()
        .map(|p| {
            let sub = design.select(&p.columns())?;
            Ok((p.name().to_owned(), ols_fit(&sub)?.adj_r_squared))
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let full_report = ols_fit(&design)?;
    let full_without_log_frequency = if predictors.contains(&Predictor::LogFrequency) && predictors.len() > 1 {
        let rest: Vec<&str> = predictors
            .iter()
            .filter(|p| **p != Predictor::LogFrequency)
            .flat_map(|p| p.columns())
            .collect();
        Some(ols_fit(&design.select(&rest)?)?.adj_r_squared)
    } else {
        None
    };
    Ok(PredictorSuite {
        label: label.to_owned(),
        n: design.n(),
        single,
        full: full_report.adj_r_squared,
        full_without_log_frequency,
        full_report,
    })
}

/// Aligned text table of adjusted R² values, one row per suite.
pub fn render_suite_table(rows: &[PredictorSuite]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut header: Vec<String> = vec!["".into(), "n".into()];
    header.extend(first.single.iter().map(|(n, _)| n.clone()));
    header.push("full".into());
    header.push("full - log_frequency".into());
    let mut table: Vec<Vec<String>> = vec![header];
    for r in rows {
        let mut line = vec![r.label.clone(), r.n.to_string()];
        line.extend(r.single.iter().map(|(_, v)| format!("{v:.3}")));
        line.push(format!("{:.3}", r.full));
        line.push(
            r.full_without_log_frequency
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
        );
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| {
            table
                .iter()
                .map(|row| row.get(j).map_or(0, |c| c.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn design(cols: &[(&str, Vec<f64>)], y: Vec<f64>) -> DesignMatrix {
        let words = (0..y.len()).map(|i| format!("w{i}")).collect();
        let mut d = DesignMatrix::new(words, y).unwrap();
        for (name, v) in cols {
            d.add_column(name, v.clone(), false).unwrap();
        }
        d
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert!(matches!(
            pearson(&[1., 1., 1.], &[1., 2., 3.]),
            Err(AnalysisError::DegenerateVariance)
        ));
        assert!(matches!(
            pearson(&[1., 2.], &[1., 2.]),
            Err(AnalysisError::TooFewPoints { .. })
        ));
        assert!(matches!(
            pearson(&[1., 2., 3.], &[1., 2.]),
            Err(AnalysisError::LengthMismatch(3, 2))
        ));
    }

    #[test]
    fn spearman_uses_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 8.0, 27.0, 64.0, 125.0];
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vec = |rng: &mut ChaCha8Rng, n: usize| -> BTreeMap<String, f64> {
            (0..n).map(|i| (format!("w{i}"), rng.random::<f64>())).collect()
        };
        let a = vec(&mut rng, 1000);
        let b = vec(&mut rng, 1000);
        let short: BTreeMap<String, f64> = [("w1", 1.0), ("w2", 2.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let m = correlation_matrix(&[("a".into(), a.clone()), ("b".into(), b), ("s".into(), short)]);
        assert_eq!(m.get("a", "a"), Some(1.0));
        assert!(m.get("a", "b").unwrap().abs() < 0.1);
        assert_eq!(m.get("a", "s"), None);
        assert_eq!(m.n[0][2], 2);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.r[i][j], m.r[j][i]);
            }
        }
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(",a,b,s\na,1.000000,"));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn special_functions_match_high_precision_values() {
        for (x, v) in [
            (0.5, 0.572_364_942_924_700_087_07),
            (1.0, 0.0),
            (3.7, 1.428_072_326_665_388_129_2),
            (10.0, 12.801_827_480_081_469_611),
            (100.5, 361.435_540_467_777_621_56),
            (0.001, 6.907_178_885_383_853_661_7),
        ] {
            assert!((ln_gamma(x) - v).abs() < 1e-10 * v.abs().max(1.0), "lnΓ({x})");
        }
        for (x, a, b, v) in [
            (0.5, 2.0, 3.0, 0.6875),
            (0.1, 0.5, 0.5, 0.204_832_764_699_133_457_54),
            (0.9, 10.0, 0.5, 0.151_640_909_634_709_968_56),
            (0.3, 50.0, 60.0, 0.000_343_411_518_766_288_654_57),
            (0.999, 2.5, 1.5, 0.999_892_727_629_006_367_39),
            (0.02, 1.0, 7.0, 0.131_874_466_753_280_002_58),
            (0.75, 100.0, 0.5, 3.562_951_043_507_362_646_4e-14),
            (0.5, 0.5, 0.5, 0.5),
        ] {
            assert!(
                (regularized_incomplete_beta(a, b, x) - v).abs() < 1e-8,
                "I_{x}({a},{b})"
            );
        }
        for (t, df, p) in [
            (2.0, 10.0, 0.073_388_034_770_740_375_122),
            (0.5, 3.0, 0.651_447_964_848_151_107_44),
            (4.3, 120.0, 0.000_034_977_989_272_676_393_806),
            (1.96, 1000.0, 0.050_273_184_955_748_938_381),
            (10.0, 5.0, 0.000_170_947_575_742_963_566_81),
            (0.0, 7.0, 1.0),
            (3.1, 1.0, 0.198_652_184_398_237_072_68),
            (2.5, 37.0, 0.016_979_962_176_607_775_79),
        ] {
            assert!((t_test_p_value(t, df) - p).abs() < 1e-8, "t={t} df={df}");
            assert!((t_test_p_value(-t, df) - p).abs() < 1e-8);
        }
    }

    #[test]
    fn p_values_agree_with_statrs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let df = rng.random_range(1..300) as f64;
            let t: f64 = rng.random_range(-8.0..8.0);
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            let reference = 2.0 * dist.sf(t.abs());
            assert!((t_test_p_value(t, df) - reference).abs() < 1e-8, "t={t} df={df}");
        }
    }

    #[test]
    fn ols_hand_example() {
        // x̄ = 3, ȳ = 4, Sxy = 9, Sxx = 10 → slope 0.9, intercept 1.3.
        let d = design(&[("x", vec![1., 2., 3., 4., 5.])], vec![2., 3., 5., 4., 6.]);
        let r = ols_fit(&d).unwrap();
        assert_abs_diff_eq!(r.coefficients[0].estimate, 1.3, epsilon = 1e-10);
        assert_abs_diff_eq!(r.coefficients[1].estimate, 0.9, epsilon = 1e-10);
        // RSS = 1.9, TSS = 10.
        assert_abs_diff_eq!(r.r_squared, 0.81, epsilon = 1e-12);
        assert_abs_diff_eq!(r.adj_r_squared, 1.0 - 0.19 * 4.0 / 3.0, epsilon = 1e-12);
        // se(slope) = sqrt(σ² / Sxx) with σ² = 1.9 / 3.
        assert_abs_diff_eq!(
            r.coefficients[1].std_error,
            (1.9f64 / 3.0 / 10.0).sqrt(),
            epsilon = 1e-12
        );
        assert!(r.vif.is_empty());
    }

    #[test]
    fn perfect_and_null_fits() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let r = ols_fit(&design(&[("x", x)], y)).unwrap();
        assert_abs_diff_eq!(r.r_squared, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.adj_r_squared, 1.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let r = ols_fit(&design(&[("x", x)], y)).unwrap();
        assert!(r.adj_r_squared <= 0.02, "{}", r.adj_r_squared);

        let r = ols_fit(&design(&[("x", vec![1., 2., 3., 5.])], vec![2.0; 4])).unwrap();
        assert!(r.adj_r_squared <= 0.0);
    }

    #[test]
    fn ols_errors() {
        let d = design(&[("x", vec![1., 2.])], vec![1., 2.]);
        assert!(matches!(ols_fit(&d), Err(AnalysisError::InsufficientData { .. })));
        let d = design(
            &[("x", vec![1., 2., 3., 4.]), ("x2", vec![2., 4., 6., 8.])],
            vec![1., 3., 2., 5.],
        );
        assert!(matches!(ols_fit(&d), Err(AnalysisError::RankDeficient(c)) if c == "x2"));
    }

    #[test]
    fn vif_examples() {
        let e1 = [0.5, -0.5, 0.5, -0.5, 0.5, -0.5];
        let e2 = [0.5, 0.5, -0.5, -0.5, 0.0, 0.0];
        // Centred and mutually orthogonal.
        let e3 = [0.5, -0.5, -0.5, 0.5, 0.0, 0.0];
        let y = vec![1.0, 2.0, 0.5, 3.0, 1.5, 2.5];
        let orth = design(&[("a", e1.to_vec()), ("b", e2.to_vec()), ("c", e3.to_vec())], y.clone());
        for (_, v) in vif(&orth).unwrap() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
        // Unit-norm centred e1, e2' → correlation exactly 0.6.
        let n1 = (e1.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let n2 = (e2.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let x1: Vec<f64> = e1.iter().map(|v| v / n1).collect();
        let x2: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 0.6 * a / n1 + 0.8 * b / n2).collect();
        assert_abs_diff_eq!(pearson(&x1, &x2).unwrap(), 0.6, epsilon = 1e-12);
        let corr = design(&[("a", x1.clone()), ("b", x2)], y.clone());
        for (_, v) in vif(&corr).unwrap() {
            assert_abs_diff_eq!(v, 1.5625, epsilon = 1e-10);
        }
        let dup = design(&[("a", x1.clone()), ("b", x1)], y);
        assert!(matches!(vif(&dup), Err(AnalysisError::RankDeficient(_))));
    }

    #[test]
    fn mad_filter_drops_far_values() {
        let mut v: BTreeMap<String, f64> = (0..9).map(|i| (format!("w{i}"), 0.4 + 0.01 * i as f64)).collect();
        v.insert("far".into(), 0.99);
        let (kept, removed) = mad_filter(&v, 3.0);
        assert_eq!(removed, vec!["far".to_string()]);
        assert_eq!(kept.len(), 9);
        let flat: BTreeMap<String, f64> = (0..5)
            .map(|i| (format!("w{i}"), 1.0))
            .chain([("x".into(), 9.0)])
            .collect();
        assert_eq!(mad_filter(&flat, 3.0).0.len(), 6);
    }

    fn feature(word: &str, lf: f64, conc: f64, mlu: f64, cat: LexicalCategory) -> WordFeatures {
        WordFeatures {
            word: word.into(),
            count: lf.exp() as u64,
            log_frequency: lf,
            n_chars: word.len(),
            concreteness: Some(conc),
            mlu: Some(mlu),
            lexical_category: cat,
        }
    }

    #[test]
    fn suite_on_frequency_driven_aoa() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cats = [
            LexicalCategory::Noun,
            LexicalCategory::Predicate,
            LexicalCategory::FunctionWord,
        ];
        let mut feats = BTreeMap::new();
        let mut aoa = BTreeMap::new();
        for i in 0..80 {
            let w = format!("word{i}");
            let lf = rng.random_range(1.0..9.0);
            feats.insert(
                w.clone(),
                feature(
                    &w,
                    lf,
                    rng.random_range(1.0..5.0),
                    rng.random_range(2.0..6.0),
                    cats[i % 3],
                ),
            );
            aoa.insert(w, 30.0 - 2.0 * lf);
        }
        feats.insert("misc".into(), feature("misc", 2.0, 2.0, 3.0, LexicalCategory::Other));
        aoa.insert("misc".into(), 26.0);
        let suite = predictor_suite("children", &aoa, &feats, &Predictor::ALL).unwrap();
        assert_eq!(suite.n, 80);
        assert!(suite
            .full_report
            .dropped
            .iter()
            .any(|(w, why)| w == "misc" && why == "category other"));
        let lf = suite.single.iter().find(|(n, _)| n == "log_frequency").unwrap().1;
        assert_abs_diff_eq!(lf, 1.0, epsilon = 1e-9);
        assert!(suite.full_without_log_frequency.unwrap() < 0.2);
        let text = render_suite_table(&[suite]);
        assert!(text.lines().next().unwrap().contains("log_frequency"));
        assert!(text.contains("children"));

        let flat: BTreeMap<String, f64> = aoa.keys().map(|w| (w.clone(), 25.0)).collect();
        let suite = predictor_suite("flat", &flat, &feats, &Predictor::ALL).unwrap();
        assert!(suite.single.iter().all(|(_, v)| *v <= 0.0));
        assert!(suite.full <= 0.0);

        let few: BTreeMap<String, f64> = aoa.iter().take(10).map(|(k, v)| (k.clone(), *v)).collect();
        assert!(matches!(
            predictor_suite("few", &few, &feats, &Predictor::ALL),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(x in prop::collection::vec(-100.0f64..100.0, 3..40), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let z: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn residuals_orthogonal_and_r2_monotone(seed in 0u64..1000, n in 8usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut col = || (0..n).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
            let (a, b, c, y) = (col(), col(), col(), col());
            let small = design(&[("a", a.clone()), ("b", b.clone())], y.clone());
            let big = design(&[("a", a.clone()), ("b", b.clone()), ("c", c)], y.clone());
            let rs = ols_fit(&small).unwrap();
            let rb = ols_fit(&big).unwrap();
            prop_assert!(rb.r_squared >= rs.r_squared - 1e-12);
            prop_assert!(rs.adj_r_squared <= rs.r_squared);
            let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            for x in [&vec![1.0; n], &a, &b] {
                let dot: f64 = x.iter().zip(&rs.residuals).map(|(p, q)| p * q).sum();
                prop_assert!(dot.abs() < 1e-8 * scale * 10.0);
            }
        }

        #[test]
        fn two_predictor_vif_closed_form(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 25;
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let rho = pearson(&a, &b).unwrap();
            let mut d = design(&[("a", a), ("b", b)], (0..n).map(|i| i as f64).collect());
            d.standardize();
            for (_, v) in vif(&d).unwrap() {
                prop_assert!((v - 1.0 / (1.0 - rho * rho)).abs() < 1e-10 * v);
            }
        }
    }
}
