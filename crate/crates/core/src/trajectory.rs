//! Signature trajectories over training and the Cauchy-style age of
//! acquisition: the first checkpoint after which the (smoothed) trajectory
//! never moves by `epsilon` or more.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Polarity;
use crate::signatures::{Family, SignatureKind, SignatureValue};

/// Points required in the tail starting at the AoA index (inclusive).
pub const MIN_TAIL: usize = 2;
pub const DEFAULT_EPSILON: f64 = 0.07;
pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_EPSILON_GRID: [f64; 5] = [0.03, 0.05, 0.07, 0.10, 0.15];

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory has no points")]
    Empty,
    #[error("trajectory steps must be strictly increasing")]
    NotIncreasing,
    #[error("trajectory value {0} is not finite")]
    NonFinite(f64),
    #[error("smoothing window {window} exceeds the {points} available points")]
    WindowTooLarge { window: usize, points: usize },
    #[error("smoothing window must be odd and ≥ 1, got {0}")]
    InvalidWindow(usize),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("{0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub word: String,
    pub kind: SignatureKind,
    pub seed: u64,
    pub points: Vec<(u64, f64)>,
    pub total_steps: u64,
    /// Moving-average window already applied (1 = raw).
    pub window: usize,
}

impl Trajectory {
    pub fn new(
        word: impl Into<String>,
        kind: SignatureKind,
        seed: u64,
        points: Vec<(u64, f64)>,
    ) -> Result<Self, TrajectoryError> {
        let last = points.last().ok_or(TrajectoryError::Empty)?.0;
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(TrajectoryError::NotIncreasing);
        }
        if let Some(&(_, v)) = points.iter().find(|(_, v)| !v.is_finite()) {
            return Err(TrajectoryError::NonFinite(v));
        }
        Ok(Trajectory {
            word: word.into(),
            kind,
            seed,
            points,
            total_steps: last,
            window: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.0).collect()
    }
}

/// Groups signature values into one trajectory per (word, kind, seed).
pub fn trajectories_from_signatures(values: &[SignatureValue]) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut groups: BTreeMap<(String, SignatureKind, u64), Vec<(u64, f64)>> = BTreeMap::new();
    for v in values {
        groups
            .entry((v.word.clone(), v.kind(), v.seed))
            .or_default()
            .push((v.step, v.value));
    }
    groups
        .into_iter()
        .map(|((word, kind, seed), mut pts)| {
            pts.sort_by_key(|p| p.0);
            Trajectory::new(word, kind, seed, pts)
        })
        .collect()
}

/// Centered moving average. Near the ends the window is truncated to the
/// neighbours that exist, so `[0, 3, 0]` with window 3 becomes
/// `[1.5, 1, 1.5]`.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>, TrajectoryError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(TrajectoryError::InvalidWindow(window));
    }
    if window > values.len() {
        return Err(TrajectoryError::WindowTooLarge {
            window,
            points: values.len(),
        });
    }
    let half = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

pub fn smooth_moving_average(traj: &Trajectory, window: usize) -> Result<Trajectory, TrajectoryError> {
    let smoothed = moving_average(&traj.values(), window)?;
    Ok(Trajectory {
        points: traj.steps().into_iter().zip(smoothed).collect(),
        window,
        ..traj.clone()
    })
}

/// Smallest index `t` whose tail `values[t..]` spans less than `epsilon`,
/// provided the tail has at least [`MIN_TAIL`] points. Linear time: the
/// tail spread only grows as `t` moves left.
pub fn cauchy_index(values: &[f64], epsilon: f64) -> Option<usize> {
    let n = values.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut best = None;
    for t in (0..n).rev() {
        lo = lo.min(values[t]);
        hi = hi.max(values[t]);
        if hi - lo >= epsilon {
            break;
        }
        if n - t >= MIN_TAIL {
            best = Some(t);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoAResult {
    pub word: String,
    pub family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    pub polarity: Polarity,
    pub seed: u64,
    pub epsilon: f64,
    pub converged: bool,
    pub aoa_step: Option<u64>,
    pub aoa_normalized: Option<f64>,
    #[serde(default = "one")]
    pub window: usize,
}

fn one() -> usize {
    1
}

impl AoAResult {
    pub fn kind(&self) -> SignatureKind {
        SignatureKind::new(self.family, self.polarity)
    }
}

/// Extracts the AoA from `traj` as given (smooth it first if desired).
/// Non-convergence is reported in the result, not as an error.
pub fn extract_aoa_cauchy(traj: &Trajectory, epsilon: f64) -> Result<AoAResult, TrajectoryError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(TrajectoryError::InvalidEpsilon(epsilon));
    }
    let n = traj.len();
    let index = cauchy_index(&traj.values(), epsilon);
    Ok(AoAResult {
        word: traj.word.clone(),
        family: traj.kind.family,
        polarity: traj.kind.polarity,
        seed: traj.seed,
        epsilon,
        converged: index.is_some(),
        aoa_step: index.map(|i| traj.points[i].0),
        aoa_normalized: index.map(|i| i as f64 / (n - 1) as f64),
        window: traj.window,
    })
}

/// Smooths (window 1 leaves the trajectory raw) and extracts. Windows wider
/// than the trajectory are clamped to the largest odd width that fits.
pub fn extract_aoa(traj: &Trajectory, epsilon: f64, window: usize) -> Result<AoAResult, TrajectoryError> {
    let fit = if window > traj.len() {
        traj.len() - (1 - traj.len() % 2)
    } else {
        window
    };
    let smoothed = smooth_moving_average(traj, fit.max(1))?;
    extract_aoa_cauchy(&smoothed, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    pub polarity: Polarity,
    pub epsilon: f64,
    pub words: usize,
    pub nonconverged: usize,
    pub fraction_nonconverged: f64,
}

/// Fraction of words that fail to converge, per kind and epsilon. A word
/// fails if any of its seeds fails.
pub fn convergence_sweep(
    trajs: &[Trajectory],
    epsilons: &[f64],
    window: usize,
) -> Result<Vec<SweepRow>, TrajectoryError> {
    let mut rows = Vec::new();
    let mut by_kind: BTreeMap<SignatureKind, BTreeMap<&str, Vec<&Trajectory>>> = BTreeMap::new();
    for t in trajs {
        by_kind.entry(t.kind).or_default().entry(&t.word).or_default().push(t);
    }
    for (kind, words) in &by_kind {
        for &eps in epsilons {
            let mut failed = 0;
            for seeds in words.values() {
                let mut all = true;
                for t in seeds {
                    all &= extract_aoa(t, eps, window)?.converged;
                }
                failed += usize::from(!all);
            }
            rows.push(SweepRow {
                family: kind.family,
                polarity: kind.polarity,
                epsilon: eps,
                words: words.len(),
                nonconverged: failed,
                fraction_nonconverged: failed as f64 / words.len() as f64,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateAoA {
    pub word: String,
    pub family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    pub polarity: Polarity,
    pub epsilon: f64,
    pub seeds: usize,
    pub aoa_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedWord {
    pub word: String,
    pub family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    pub polarity: Polarity,
    pub epsilon: f64,
    pub failed_seeds: String,
}

#[derive(Debug, Default)]
pub struct Aggregate {
    pub rows: Vec<AggregateAoA>,
    pub excluded: Vec<ExcludedWord>,
}

/// Mean normalized AoA across seeds for every (word, kind, epsilon) that
/// converged in all of its seeds.
pub fn aggregate_seeds(results: &[AoAResult]) -> Aggregate {
    let mut groups: BTreeMap<(String, SignatureKind, u64), Vec<&AoAResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.word.clone(), r.kind(), r.epsilon.to_bits()))
            .or_default()
            .push(r);
    }
    let mut out = Aggregate::default();
    for ((word, kind, eps), rs) in groups {
        let epsilon = f64::from_bits(eps);
        let failed: Vec<String> = rs.iter().filter(|r| !r.converged).map(|r| r.seed.to_string()).collect();
        if failed.is_empty() {
            let sum: f64 = rs.iter().filter_map(|r| r.aoa_normalized).sum();
            out.rows.push(AggregateAoA {
                word,
                family: kind.family,
                polarity: kind.polarity,
                epsilon,
                seeds: rs.len(),
                aoa_normalized: sum / rs.len() as f64,
            });
        } else {
            out.excluded.push(ExcludedWord {
                word,
                family: kind.family,
                polarity: kind.polarity,
                epsilon,
                failed_seeds: failed.join(" "),
            });
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    word: String,
    family: Family,
    #[serde(serialize_with = "crate::corpus::serialize_signature_polarity")]
    polarity: Polarity,
    seed: u64,
    step: u64,
    value: f64,
}

fn table_err(e: csv::Error) -> TrajectoryError {
    TrajectoryError::Table(e.to_string())
}

/// Writes `word,family,polarity,seed,step,value`.
pub fn write_trajectories_csv<W: Write>(out: W, trajs: &[Trajectory]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in trajs {
        for &(step, value) in &t.points {
            w.serialize(TrajectoryRow {
                word: t.word.clone(),
                family: t.kind.family,
                polarity: t.kind.polarity,
                seed: t.seed,
                step,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories_csv<R: Read>(input: R) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut groups: BTreeMap<(String, SignatureKind, u64), Vec<(u64, f64)>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: TrajectoryRow = row.map_err(table_err)?;
        groups
            .entry((row.word, SignatureKind::new(row.family, row.polarity), row.seed))
            .or_default()
            .push((row.step, row.value));
    }
    groups
        .into_iter()
        .map(|((word, kind, seed), pts)| Trajectory::new(word, kind, seed, pts))
        .collect()
}

/// Writes `word,family,polarity,seed,epsilon,converged,aoa_step,aoa_normalized`.
pub fn write_aoa_csv<W: Write>(out: W, results: &[AoAResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "word",
        "family",
        "polarity",
        "seed",
        "epsilon",
        "converged",
        "aoa_step",
        "aoa_normalized",
    ])?;
    for r in results {
        w.write_record([
            r.word.clone(),
            r.family.as_str().to_owned(),
            r.polarity.as_signature_str().to_owned(),
            r.seed.to_string(),
            r.epsilon.to_string(),
            r.converged.to_string(),
            r.aoa_step.map(|s| s.to_string()).unwrap_or_default(),
            r.aoa_normalized.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aoa_csv<R: Read>(input: R) -> Result<Vec<AoAResult>, TrajectoryError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize().map(|row| row.map_err(table_err)).collect()
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateAoA]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv<R: Read>(input: R) -> Result<Vec<AggregateAoA>, TrajectoryError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize().map(|row| row.map_err(table_err)).collect()
}
