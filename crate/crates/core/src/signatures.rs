//! The nine distributional signatures and their estimators.
//!
//! Each signature is an expectation over contexts. The family fixes what is
//! averaged and how contexts are weighted:
//!
//! | family    | summand                    | weights                          |
//! |-----------|----------------------------|----------------------------------|
//! | true      | `-log q(w|c)`              | `p(c|w)`, `p(c|¬w)`, `p(c)`      |
//! | intrinsic | `-log q(w|c)`              | `q(c|w)`, `q(c|¬w)`, `q(c)`      |
//! | reference | `|log q(w|c) - log r(w|c)|`| as for true                      |
//!
//! Estimators take contexts sampled from the data (so true-family weights are
//! implicit and uniform) and reweight them where the family requires it.
//! Contexts whose score is `-∞` are dropped before weighting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContextSample, Polarity};
use crate::lm::toy::ToyLanguage;
use crate::lm::{word_tokens, CheckpointId, LmError, Scorer};

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("empty context sample")]
    EmptySample,
    #[error("every context in the sample has zero probability")]
    AllContextsDropped,
    #[error("score {0} is not a log-probability")]
    InvalidScore(f64),
    #[error("intrinsic estimation needs log q(c) for every context")]
    CapabilityMissing,
    #[error("reference estimation needs log r(w|c) for every context")]
    MissingReference,
    #[error("intrinsic weights underflow to zero")]
    DegenerateWeights,
    #[error("word `{0}` has no positive context mass")]
    DegenerateWord(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("signature table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    True,
    Intrinsic,
    Reference,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::True, Family::Intrinsic, Family::Reference];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::True => "true",
            Family::Intrinsic => "intrinsic",
            Family::Reference => "reference",
        }
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" => Ok(Family::True),
            "intrinsic" => Ok(Family::Intrinsic),
            "reference" => Ok(Family::Reference),
            other => Err(format!("unknown signature family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignatureKind {
    pub family: Family,
    pub polarity: Polarity,
}

impl SignatureKind {
    pub const fn new(family: Family, polarity: Polarity) -> Self {
        SignatureKind { family, polarity }
    }

    /// Family-major order: σ+, σ-, σ±, σI+, ..., σR±.
    pub const ALL: [SignatureKind; 9] = {
        use Family::*;
        use Polarity::*;
        [
            SignatureKind::new(True, Positive),
            SignatureKind::new(True, Negative),
            SignatureKind::new(True, Marginal),
            SignatureKind::new(Intrinsic, Positive),
            SignatureKind::new(Intrinsic, Negative),
            SignatureKind::new(Intrinsic, Marginal),
            SignatureKind::new(Reference, Positive),
            SignatureKind::new(Reference, Negative),
            SignatureKind::new(Reference, Marginal),
        ]
    };

    /// Short label such as `σI+`.
    pub fn symbol(self) -> String {
        let fam = match self.family {
            Family::True => "",
            Family::Intrinsic => "I",
            Family::Reference => "R",
        };
        format!("σ{fam}{}", self.polarity.symbol())
    }

    /// File-safe label such as `intrinsic_positive`.
    pub fn label(self) -> String {
        format!("{}_{}", self.family.as_str(), self.polarity.as_signature_str())
    }
}

impl fmt::Display for SignatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SignatureKind {
    type Err = String;

    /// Accepts `family_polarity`, `family:polarity` or a symbol like `σR-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((fam, pol)) = s.split_once(['_', ':']) {
            return Ok(SignatureKind::new(fam.parse()?, pol.parse()?));
        }
        SignatureKind::ALL
            .into_iter()
            .find(|k| k.symbol() == s || k.symbol().replace('±', "+-") == s)
            .ok_or_else(|| format!("unknown signature `{s}`"))
    }
}

/// Scores for one sampled context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredContext {
    pub log_q: f64,
    pub log_q_c: Option<f64>,
    pub log_r: Option<f64>,
    /// Sample multiplicity (1 for unweighted estimation).
    pub weight: f64,
}

impl ScoredContext {
    pub fn new(log_q: f64) -> Self {
        ScoredContext {
            log_q,
            log_q_c: None,
            log_r: None,
            weight: 1.0,
        }
    }

    pub fn with_context(mut self, log_q_c: f64) -> Self {
        self.log_q_c = Some(log_q_c);
        self
    }

    pub fn with_reference(mut self, log_r: f64) -> Self {
        self.log_r = Some(log_r);
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Contexts that contributed.
    pub sample_size: usize,
    /// Contexts dropped for zero probability.
    pub dropped: usize,
    /// Entropy of the normalized intrinsic weights.
    pub weight_entropy: Option<f64>,
}

fn check_log_prob(v: f64) -> Result<(), SignatureError> {
    if v.is_nan() || v > 0.0 {
        Err(SignatureError::InvalidScore(v))
    } else {
        Ok(())
    }
}

fn check_sample(scores: &[ScoredContext]) -> Result<(), SignatureError> {
    if scores.is_empty() {
        return Err(SignatureError::EmptySample);
    }
    for s in scores {
        check_log_prob(s.log_q)?;
        if let Some(v) = s.log_q_c {
            check_log_prob(v)?;
        }
        if let Some(v) = s.log_r {
            check_log_prob(v)?;
        }
        if !(s.weight >= 0.0 && s.weight.is_finite()) {
            return Err(SignatureError::Table(format!(
                "sample weight {} must be finite and ≥ 0",
                s.weight
            )));
        }
    }
    Ok(())
}

fn weighted_mean(terms: impl Iterator<Item = (f64, f64)>) -> Option<(f64, usize)> {
    let (mut num, mut den, mut n) = (0.0, 0.0, 0);
    for (w, x) in terms {
        num += w * x;
        den += w;
        n += 1;
    }
    (den > 0.0).then(|| (num / den, n))
}

/// `-mean log q(w|c)` over the sample.
pub fn estimate_true(scores: &[ScoredContext]) -> Result<Estimate, SignatureError> {
    check_sample(scores)?;
    let kept = scores.iter().filter(|s| s.log_q.is_finite());
    let (value, n) = weighted_mean(kept.map(|s| (s.weight, -s.log_q))).ok_or(SignatureError::AllContextsDropped)?;
    Ok(Estimate {
        value: value.max(0.0),
        sample_size: n,
        dropped: scores.len() - n,
        weight_entropy: None,
    })
}

/// `log(1 - exp(x))` for `x ≤ 0`, accurate near both ends.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Normalized self-weights of the intrinsic estimator, one per input
/// context (zero for dropped ones).
pub fn intrinsic_weights(scores: &[ScoredContext], polarity: Polarity) -> Result<Vec<f64>, SignatureError> {
    check_sample(scores)?;
    let mut log_w = Vec::with_capacity(scores.len());
    for s in scores {
        let log_q_c = s.log_q_c.ok_or(SignatureError::CapabilityMissing)?;
        if !s.log_q.is_finite() {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let own = match polarity {
            Polarity::Positive => s.log_q,
            Polarity::Negative => log1m_exp(s.log_q),
            Polarity::Marginal => 0.0,
        };
        log_w.push(s.weight.ln() + log_q_c + own);
    }
    if scores.iter().all(|s| !s.log_q.is_finite()) {
        return Err(SignatureError::AllContextsDropped);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(SignatureError::DegenerateWeights);
    }
    let total: f64 = log_w.iter().map(|lw| (lw - max).exp()).sum();
    let log_total = max + total.ln();
    Ok(log_w.iter().map(|lw| (lw - log_total).exp()).collect())
}

/// Self-normalized estimate weighted by the model's own posterior over the
/// sampled contexts.
pub fn estimate_intrinsic(scores: &[ScoredContext], polarity: Polarity) -> Result<Estimate, SignatureError> {
    let weights = intrinsic_weights(scores, polarity)?;
    let mut value = 0.0;
    let mut entropy = 0.0;
    for (w, s) in weights.iter().zip(scores) {
        if *w > 0.0 {
            value -= w * s.log_q;
            entropy -= w * w.ln();
        }
    }
    let dropped = scores.iter().filter(|s| !s.log_q.is_finite()).count();
    Ok(Estimate {
        value: value.max(0.0),
        sample_size: scores.len() - dropped,
        dropped,
        weight_entropy: Some(entropy.max(0.0)),
    })
}

/// Mean absolute log-probability difference between model and reference.
pub fn estimate_reference(scores: &[ScoredContext]) -> Result<Estimate, SignatureError> {
    check_sample(scores)?;
    let mut terms = Vec::with_capacity(scores.len());
    for s in scores {
        let log_r = s.log_r.ok_or(SignatureError::MissingReference)?;
        if s.log_q.is_finite() && log_r.is_finite() {
            terms.push((s.weight, (s.log_q - log_r).abs()));
        }
    }
    let (value, n) = weighted_mean(terms.into_iter()).ok_or(SignatureError::AllContextsDropped)?;
    Ok(Estimate {
        value,
        sample_size: n,
        dropped: scores.len() - n,
        weight_entropy: None,
    })
}

pub fn estimate(kind: SignatureKind, scores: &[ScoredContext]) -> Result<Estimate, SignatureError> {
    match kind.family {
        Family::True => estimate_true(scores),
        Family::Intrinsic => estimate_intrinsic(scores, kind.polarity),
        Family::Reference => estimate_reference(scores),
    }
}

/// Scores a context sample for `word`. `log q(c)` and `log r(w|c)` are
/// filled in when the backends provide them.
pub fn score_sample(
    model: &dyn Scorer,
    reference: Option<&dyn Scorer>,
    word: &str,
    sample: &ContextSample,
    frequency_weighted: bool,
) -> Result<Vec<ScoredContext>, LmError> {
    let with_context = model.scores_context_prob();
    sample
        .contexts
        .iter()
        .map(|entry| {
            let mut s = ScoredContext::new(model.log_prob_word(word, &entry.tokens)?);
            if with_context {
                s = s.with_context(model.log_prob_context(&entry.tokens)?);
            }
            if let Some(r) = reference {
                s = s.with_reference(r.log_prob_word(word, &entry.tokens)?);
            }
            if frequency_weighted {
                s = s.with_weight(entry.count as f64);
            }
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureValue {
    pub word: String,
    pub family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    pub polarity: Polarity,
    pub step: u64,
    pub seed: u64,
    pub value: f64,
    pub sample_size: usize,
    #[serde(default, skip_serializing)]
    pub weight_entropy: Option<f64>,
}

impl SignatureValue {
    pub fn kind(&self) -> SignatureKind {
        SignatureKind::new(self.family, self.polarity)
    }

    fn from_estimate(word: &str, kind: SignatureKind, id: CheckpointId, est: Estimate) -> Self {
        SignatureValue {
            word: word.to_owned(),
            family: kind.family,
            polarity: kind.polarity,
            step: id.step,
            seed: id.seed,
            value: est.value,
            sample_size: est.sample_size,
            weight_entropy: est.weight_entropy,
        }
    }
}

/// Outcome of scoring every available signature kind for one word at one
/// checkpoint.
#[derive(Debug, Default)]
pub struct SuiteResult {
    pub values: Vec<SignatureValue>,
    /// Kinds skipped for lack of a backend capability, with the reason.
    pub skipped: Vec<(SignatureKind, String)>,
    /// Contexts dropped for zero probability, per kind.
    pub dropped: Vec<(SignatureKind, usize)>,
}

/// Computes all nine kinds that the backends support. `samples` maps each
/// polarity to its context sample; missing polarities are skipped.
pub fn signature_suite(
    word: &str,
    samples: &BTreeMap<Polarity, ContextSample>,
    model: &dyn Scorer,
    reference: Option<&dyn Scorer>,
    checkpoint: CheckpointId,
    frequency_weighted: bool,
) -> Result<SuiteResult, SignatureError> {
    let mut out = SuiteResult::default();
    for (&polarity, sample) in samples {
        let scores = score_sample(model, reference, word, sample, frequency_weighted)?;
        for family in Family::ALL {
            let kind = SignatureKind::new(family, polarity);
            let result = match family {
                Family::Intrinsic if !model.scores_context_prob() => {
                    out.skipped.push((kind, "backend does not score log q(c)".into()));
                    continue;
                }
                Family::Reference if reference.is_none() => {
                    out.skipped.push((kind, "no reference scores".into()));
                    continue;
                }
                _ => estimate(kind, &scores),
            };
            match result {
                Ok(est) => {
                    if est.dropped > 0 {
                        out.dropped.push((kind, est.dropped));
                    }
                    out.values
                        .push(SignatureValue::from_estimate(word, kind, checkpoint, est));
                }
                Err(SignatureError::AllContextsDropped) => {
                    out.skipped.push((kind, "every context has zero probability".into()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Writes `word,family,polarity,step,seed,value,sample_size`.
pub fn write_signatures_csv<W: Write>(out: W, values: &[SignatureValue]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in values {
        w.serialize(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signatures_csv<R: Read>(input: R) -> Result<Vec<SignatureValue>, SignatureError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(|e| SignatureError::Table(e.to_string())))
        .collect()
}

/// Writes the intrinsic weight-entropy diagnostics.
pub fn write_intrinsic_diagnostics<W: Write>(out: W, values: &[SignatureValue]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "word",
        "polarity",
        "step",
        "seed",
        "weight_entropy",
        "sample_size",
        "max_entropy",
    ])?;
    for v in values {
        if let Some(h) = v.weight_entropy {
            w.write_record([
                v.word.clone(),
                v.polarity.as_signature_str().to_owned(),
                v.step.to_string(),
                v.seed.to_string(),
                h.to_string(),
                v.sample_size.to_string(),
                (v.sample_size as f64).ln().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Normalized context distribution of a toy language for `word`:
/// `p(c|w)`, `p(c|¬w)` or `p(c)` over every context with positive mass.
pub fn exact_context_distribution(
    p: &ToyLanguage,
    word: &str,
    polarity: Polarity,
) -> Result<Vec<(Vec<String>, f64)>, SignatureError> {
    let w = word_tokens(word)?;
    let mut out = Vec::new();
    let mut total = 0.0;
    for c in p.all_contexts() {
        let prefix = p.prefix_prob(&c);
        if prefix <= 0.0 {
            continue;
        }
        let p_w = p.word_prob(&w, &c)?;
        let mass = match polarity {
            Polarity::Positive => p_w * prefix,
            Polarity::Negative => (1.0 - p_w).max(0.0) * prefix,
            Polarity::Marginal => prefix,
        };
        if mass > 0.0 {
            total += mass;
            out.push((c, mass));
        }
    }
    if total <= 0.0 {
        return Err(SignatureError::DegenerateWord(word.to_owned()));
    }
    for (_, m) in &mut out {
        *m /= total;
    }
    Ok(out)
}

fn toy_log_word(q: &ToyLanguage, w: &[String], c: &[String]) -> Result<f64, SignatureError> {
    match q.word_prob(w, c) {
        Ok(v) => Ok(v.ln()),
        Err(LmError::ZeroPrefix) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e.into()),
    }
}

/// Exact signature by summation over every context of length ≤ L. Contexts
/// where a summand is `-∞` are dropped and the weights renormalized, as the
/// estimators do.
pub fn exact_signature(
    p: &ToyLanguage,
    q: &ToyLanguage,
    r: &ToyLanguage,
    kind: SignatureKind,
    word: &str,
) -> Result<f64, SignatureError> {
    let w = word_tokens(word)?;
    let (mut num, mut den) = (0.0, 0.0);
    match kind.family {
        Family::True | Family::Reference => {
            for (c, weight) in exact_context_distribution(p, word, kind.polarity)? {
                let lq = toy_log_word(q, &w, &c)?;
                let term = if kind.family == Family::True {
                    -lq
                } else {
                    (lq - toy_log_word(r, &w, &c)?).abs()
                };
                if term.is_finite() {
                    num += weight * term;
                    den += weight;
                }
            }
        }
        Family::Intrinsic => {
            for c in q.all_contexts() {
                let q_c = q.context_prob(&c);
                if q_c <= 0.0 {
                    continue;
                }
                let lq = toy_log_word(q, &w, &c)?;
                if !lq.is_finite() {
                    continue;
                }
                let q_w = lq.exp();
                let weight = match kind.polarity {
                    Polarity::Positive => q_w * q_c,
                    Polarity::Negative => (1.0 - q_w) * q_c,
                    Polarity::Marginal => q_c,
                };
                num += weight * -lq;
                den += weight;
            }
        }
    }
    if den <= 0.0 {
        return Err(SignatureError::DegenerateWord(word.to_owned()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::distr::weighted::WeightedIndex;
    use rand::distr::Distribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    /// Languages over {a, b, c} with strings up to length 4. `p` puts no mass
    /// on length-4 strings so every context it supports can be extended.
    fn languages() -> (ToyLanguage, ToyLanguage, ToyLanguage) {
        let abc = ["a", "b", "c"];
        let p = ToyLanguage::from_weights(&abc, 4, |s| {
            if s.len() == 4 || s.is_empty() {
                0.0
            } else {
                let head = [3.0, 1.0, 2.0][s[0]];
                head * s.iter().map(|&x| [1.0, 0.5, 0.8][x]).product::<f64>() / (s.len() as f64)
            }
        })
        .unwrap();
        let q = ToyLanguage::from_weights(&abc, 4, |s| {
            0.5f64.powi(s.len() as i32) * (1.0 + s.iter().sum::<usize>() as f64)
        })
        .unwrap();
        let r = ToyLanguage::from_weights(&abc, 4, |s| {
            1.0 + s.len() as f64 + s.first().copied().unwrap_or(0) as f64
        })
        .unwrap();
        (p, q, r)
    }

    #[test]
    fn nine_kinds_and_labels() {
        let labels: std::collections::BTreeSet<String> = SignatureKind::ALL.iter().map(|k| k.label()).collect();
        assert_eq!(labels.len(), 9);
        assert_eq!(SignatureKind::ALL[3].symbol(), "σI+");
        for k in SignatureKind::ALL {
            assert_eq!(k.label().parse::<SignatureKind>().unwrap(), k);
            assert_eq!(k.symbol().parse::<SignatureKind>().unwrap(), k);
        }
        assert!("bogus".parse::<SignatureKind>().is_err());
    }

    #[test]
    fn true_estimator_examples() {
        let one = estimate_true(&[ScoredContext::new(0.25f64.ln())]).unwrap();
        assert_abs_diff_eq!(one.value, 1.3863, epsilon = 1e-4);
        assert_eq!(one.sample_size, 1);
        let certain = estimate_true(&[ScoredContext::new(0.0), ScoredContext::new(0.0)]).unwrap();
        assert_eq!(certain.value, 0.0);
        assert!(matches!(estimate_true(&[]), Err(SignatureError::EmptySample)));
        assert!(matches!(
            estimate_true(&[ScoredContext::new(0.1)]),
            Err(SignatureError::InvalidScore(_))
        ));
    }

    #[test]
    fn zero_probability_contexts_are_dropped() {
        let s = [ScoredContext::new(f64::NEG_INFINITY), ScoredContext::new(0.5f64.ln())];
        let e = estimate_true(&s).unwrap();
        assert_eq!((e.sample_size, e.dropped), (1, 1));
        assert_abs_diff_eq!(e.value, 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(
            estimate_true(&[ScoredContext::new(f64::NEG_INFINITY)]),
            Err(SignatureError::AllContextsDropped)
        ));
    }

    #[test]
    fn intrinsic_two_context_example() {
        let s = [
            ScoredContext::new(0.8f64.ln()).with_context(0.5f64.ln()),
            ScoredContext::new(0.2f64.ln()).with_context(0.5f64.ln()),
        ];
        let w = intrinsic_weights(&s, Polarity::Positive).unwrap();
        assert_abs_diff_eq!(w[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.2, epsilon = 1e-12);
        let e = estimate_intrinsic(&s, Polarity::Positive).unwrap();
        assert_abs_diff_eq!(e.value, 0.8 * 0.2231 + 0.2 * 1.6094, epsilon = 1e-4);
        assert_abs_diff_eq!(e.value, 0.5004, epsilon = 1e-4);
        let h = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert_abs_diff_eq!(e.weight_entropy.unwrap(), h, epsilon = 1e-12);
    }

    #[test]
    fn intrinsic_single_context_has_unit_weight() {
        for pol in Polarity::ALL {
            let s = [ScoredContext::new(0.3f64.ln()).with_context(-7.0)];
            let e = estimate_intrinsic(&s, pol).unwrap();
            assert_abs_diff_eq!(e.value, -(0.3f64.ln()), epsilon = 1e-15);
            assert_abs_diff_eq!(e.weight_entropy.unwrap(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn intrinsic_errors() {
        assert!(matches!(
            estimate_intrinsic(&[ScoredContext::new(-1.0)], Polarity::Positive),
            Err(SignatureError::CapabilityMissing)
        ));
        // q(w|c) = 1 leaves no negative mass.
        assert!(matches!(
            estimate_intrinsic(&[ScoredContext::new(0.0).with_context(-1.0)], Polarity::Negative),
            Err(SignatureError::DegenerateWeights)
        ));
    }

    #[test]
    fn reference_examples() {
        let one = [ScoredContext::new(0.5f64.ln()).with_reference(0.25f64.ln())];
        assert_abs_diff_eq!(
            estimate_reference(&one).unwrap().value,
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let same = [
            ScoredContext::new(-1.2).with_reference(-1.2),
            ScoredContext::new(-0.1).with_reference(-0.1),
        ];
        assert_eq!(estimate_reference(&same).unwrap().value, 0.0);
        assert!(matches!(
            estimate_reference(&[ScoredContext::new(-1.0)]),
            Err(SignatureError::MissingReference)
        ));
    }

    #[test]
    fn log1m_exp_accuracy() {
        for x in [-1e-3, -0.3, -0.7, -2.0, -5.0] {
            let naive = (1.0 - f64::exp(x)).ln();
            assert!((log1m_exp(x) - naive).abs() <= 1e-11 * naive.abs(), "{x}");
        }
        // Asymptotes: log(-x) near zero, -exp(x) far below it.
        assert!((log1m_exp(-1e-12) - (1e-12f64).ln()).abs() < 1e-11);
        let tiny = -(-40f64).exp();
        assert!((log1m_exp(-40.0) - tiny).abs() <= 1e-12 * tiny.abs());
        assert_eq!(log1m_exp(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn two_string_language_by_hand() {
        // p(a b) = 0.6, p(b) = 0.4. Positive contexts of `b`: "" with mass
        // prefix(b) = 0.4 and "a" with mass prefix(a b) = 0.6. With q = p,
        // q(b|"") = 0.4 and q(b|a) = 1, so σ+ = -0.4 ln 0.4.
        let p = ToyLanguage::new(
            vec!["a".into(), "b".into()],
            2,
            vec![(toks("a b"), 0.6), (toks("b"), 0.4)],
        )
        .unwrap();
        let dist = exact_context_distribution(&p, "b", Polarity::Positive).unwrap();
        assert_eq!(dist.len(), 2);
        assert_abs_diff_eq!(dist[0].1, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(dist[1].1, 0.6, epsilon = 1e-15);
        let kind = SignatureKind::new(Family::True, Polarity::Positive);
        let sigma = exact_signature(&p, &p, &p, kind, "b").unwrap();
        assert_abs_diff_eq!(sigma, 0.366_516_292_749_662_4, epsilon = 1e-12);
    }

    #[test]
    fn reference_signatures_vanish_when_models_agree() {
        let (p, _, _) = languages();
        for pol in Polarity::ALL {
            let kind = SignatureKind::new(Family::Reference, pol);
            assert_eq!(exact_signature(&p, &p, &p, kind, "b").unwrap(), 0.0);
        }
    }

    #[test]
    fn marginal_signature_decomposes_into_channels() {
        let (p, q, _) = languages();
        let w = toks("b");
        let (mut zw, mut znw, mut z) = (0.0, 0.0, 0.0);
        for c in p.all_contexts() {
            let pc = p.prefix_prob(&c);
            if pc > 0.0 {
                let pw = p.word_prob(&w, &c).unwrap();
                zw += pw * pc;
                znw += (1.0 - pw) * pc;
                z += pc;
            }
        }
        assert_abs_diff_eq!(z, p.context_normalizer(), epsilon = 1e-12);
        let s = |pol| exact_signature(&p, &q, &q, SignatureKind::new(Family::True, pol), "b").unwrap();
        let mixed = (zw * s(Polarity::Positive) + znw * s(Polarity::Negative)) / z;
        assert_abs_diff_eq!(s(Polarity::Marginal), mixed, epsilon = 1e-12);
    }

    #[test]
    fn estimators_match_enumeration_with_exact_weights() {
        let (p, q, r) = languages();
        let w = toks("c");
        for pol in Polarity::ALL {
            let dist = exact_context_distribution(&p, "c", pol).unwrap();
            let scores: Vec<ScoredContext> = dist
                .iter()
                .map(|(c, weight)| {
                    ScoredContext::new(q.word_prob(&w, c).unwrap().ln())
                        .with_reference(r.word_prob(&w, c).unwrap().ln())
                        .with_weight(*weight)
                })
                .collect();
            for fam in [Family::True, Family::Reference] {
                let kind = SignatureKind::new(fam, pol);
                let exact = exact_signature(&p, &q, &r, kind, "c").unwrap();
                assert_abs_diff_eq!(estimate(kind, &scores).unwrap().value, exact, epsilon = 1e-10);
            }

            // Intrinsic: the sample is every context, unweighted.
            let all: Vec<ScoredContext> = q
                .all_contexts()
                .iter()
                .map(|c| {
                    ScoredContext::new(q.log_prob_word("c", c).unwrap()).with_context(q.log_prob_context(c).unwrap())
                })
                .collect();
            let kind = SignatureKind::new(Family::Intrinsic, pol);
            let exact = exact_signature(&p, &q, &r, kind, "c").unwrap();
            assert_abs_diff_eq!(estimate(kind, &all).unwrap().value, exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn monte_carlo_mean_is_consistent() {
        let (p, q, r) = languages();
        let w = toks("a");
        let kind = SignatureKind::new(Family::True, Polarity::Positive);
        let exact = exact_signature(&p, &q, &r, kind, "a").unwrap();
        let dist = exact_context_distribution(&p, "a", Polarity::Positive).unwrap();
        let picker = WeightedIndex::new(dist.iter().map(|(_, m)| *m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let estimates: Vec<f64> = (0..200)
            .map(|_| {
                let scores: Vec<ScoredContext> = (0..64)
                    .map(|_| ScoredContext::new(q.word_prob(&w, &dist[picker.sample(&mut rng)].0).unwrap().ln()))
                    .collect();
                estimate_true(&scores).unwrap().value
            })
            .collect();
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let sd = (estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * sd / n.sqrt(),
            "mean {mean} exact {exact} se {}",
            sd / n.sqrt()
        );
    }

    #[test]
    fn suite_skips_missing_capabilities() {
        let (p, q, _) = languages();
        let sample = |pol, ctxs: &[&str]| ContextSample {
            word: Some("a".into()),
            polarity: pol,
            contexts: ctxs
                .iter()
                .map(|c| crate::corpus::ContextEntry {
                    tokens: toks(c),
                    count: 2,
                })
                .collect(),
            capacity: ctxs.len(),
            insufficient_types: false,
        };
        let mut samples = BTreeMap::new();
        samples.insert(Polarity::Positive, sample(Polarity::Positive, &["", "b"]));
        samples.insert(Polarity::Marginal, sample(Polarity::Marginal, &["c", "a b"]));
        let id = CheckpointId { step: 3, seed: 1 };
        let res = signature_suite("a", &samples, &q, None, id, false).unwrap();
        assert_eq!(res.values.len(), 4);
        assert_eq!(res.skipped.len(), 2);
        let res = signature_suite("a", &samples, &q, Some(&p), id, false).unwrap();
        assert_eq!(res.values.len(), 6);
        assert!(res
            .values
            .iter()
            .all(|v| v.step == 3 && v.seed == 1 && v.sample_size == 2));
        let mut buf = Vec::new();
        write_signatures_csv(&mut buf, &res.values).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("word,family,polarity,step,seed,value,sample_size\n"));
        let back = read_signatures_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), res.values.len());
        for (a, b) in back.iter().zip(&res.values) {
            assert_eq!((a.kind(), a.value), (b.kind(), b.value));
        }
    }

    fn log_prob() -> impl Strategy<Value = f64> {
        -12.0f64..0.0
    }

    proptest! {
        #[test]
        fn reference_is_a_metric(
            rows in prop::collection::vec((log_prob(), log_prob(), log_prob()), 1..30)
        ) {
            let d = |f: fn(&(f64, f64, f64)) -> (f64, f64)| {
                let s: Vec<ScoredContext> = rows.iter().map(|t| { let (a, b) = f(t); ScoredContext::new(a).with_reference(b) }).collect();
                estimate_reference(&s).unwrap().value
            };
            let qr = d(|t| (t.0, t.1));
            let rq = d(|t| (t.1, t.0));
            let rs = d(|t| (t.1, t.2));
            let qs = d(|t| (t.0, t.2));
            let qq = d(|t| (t.0, t.0));
            prop_assert!(qr >= 0.0);
            prop_assert_eq!(qr, rq);
            prop_assert_eq!(qq, 0.0);
            prop_assert!(qs <= qr + rs + 1e-12);
        }

        #[test]
        fn intrinsic_weights_sum_to_one(
            rows in prop::collection::vec((log_prob(), -30.0f64..0.0), 1..40),
            pol in prop::sample::select(Polarity::ALL.to_vec()),
        ) {
            let s: Vec<ScoredContext> = rows.iter().map(|&(q, c)| ScoredContext::new(q).with_context(c)).collect();
            let w = intrinsic_weights(&s, pol).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn positive_weight_grows_with_its_probability(
            rows in prop::collection::vec((log_prob(), -30.0f64..0.0), 2..20),
            j in 0usize..20,
            bump in 0.0f64..5.0,
        ) {
            let j = j % rows.len();
            let mut s: Vec<ScoredContext> = rows.iter().map(|&(q, c)| ScoredContext::new(q).with_context(c)).collect();
            let before = intrinsic_weights(&s, Polarity::Positive).unwrap()[j];
            s[j].log_q = (s[j].log_q + bump).min(0.0);
            let after = intrinsic_weights(&s, Polarity::Positive).unwrap()[j];
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn intrinsic_ignores_common_context_scale(
            rows in prop::collection::vec((log_prob(), -30.0f64..-5.0), 1..30),
            shift in 0.0f64..5.0,
            pol in prop::sample::select(Polarity::ALL.to_vec()),
        ) {
            let make = |d: f64| -> Vec<ScoredContext> { rows.iter().map(|&(q, c)| ScoredContext::new(q).with_context(c + d)).collect() };
            let a = estimate_intrinsic(&make(0.0), pol).unwrap().value;
            let b = estimate_intrinsic(&make(shift), pol).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn values_are_nonnegative(rows in prop::collection::vec((log_prob(), log_prob(), -20.0f64..0.0), 1..30)) {
            let s: Vec<ScoredContext> = rows.iter().map(|&(q, r, c)| ScoredContext::new(q).with_reference(r).with_context(c)).collect();
            for kind in SignatureKind::ALL {
                prop_assert!(estimate(kind, &s).unwrap().value >= 0.0);
            }
        }
    }
}
