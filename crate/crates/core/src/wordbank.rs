//! Child vocabulary norms: per-word production proportions by age, lexical
//! categories, and child age of acquisition.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::LexicalCategory;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const HEADER: [&str; 4] = ["word", "category", "month", "proportion"];

#[derive(Debug, Error)]
pub enum WordbankError {
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("`{0}` never reaches the production threshold")]
    NeverAcquired(String),
    #[error("`{0}` is not in the norms table")]
    UnknownWord(String),
    #[error("threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// word → (month, proportion) with months strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProportionTable {
    curves: BTreeMap<String, Vec<(u32, f64)>>,
}

impl ProportionTable {
    pub fn curve(&self, word: &str) -> Option<&[(u32, f64)]> {
        self.curves.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.curves.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Wordbank {
    pub table: ProportionTable,
    /// Raw category label as written, kept for lossless re-serialization.
    categories: BTreeMap<String, String>,
    /// Words removed by the exclusion list.
    pub excluded: Vec<String>,
}

impl Wordbank {
    pub fn category(&self, word: &str) -> Option<LexicalCategory> {
        self.categories.get(word).map(|c| LexicalCategory::parse_lenient(c))
    }

    pub fn raw_category(&self, word: &str) -> Option<&str> {
        self.categories.get(word).map(String::as_str)
    }

    pub fn categories(&self) -> BTreeMap<String, LexicalCategory> {
        self.categories
            .iter()
            .map(|(w, c)| (w.clone(), LexicalCategory::parse_lenient(c)))
            .collect()
    }
}

/// One word per line; blank lines and `#` comments are ignored.
pub fn read_exclusions<R: BufRead>(reader: R) -> Result<BTreeSet<String>, WordbankError> {
    let mut out = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let word = line.split('#').next().unwrap_or("").trim();
        if !word.is_empty() {
            out.insert(word.to_owned());
        }
    }
    Ok(out)
}

pub fn read_wordbank<R: Read>(input: R, exclusions: &BTreeSet<String>) -> Result<Wordbank, WordbankError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers().map_err(|e| WordbankError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(WordbankError::Format {
            line: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut wb = Wordbank::default();
    let mut excluded = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| WordbankError::Format {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fmt = |message: String| WordbankError::Format { line, message };
        let word = record[0].to_owned();
        if word.is_empty() {
            return Err(fmt("empty word".into()));
        }
        let month: u32 = record[2]
            .parse()
            .map_err(|_| fmt(format!("bad month `{}`", &record[2])))?;
        let proportion: f64 = record[3]
            .parse()
            .map_err(|_| fmt(format!("bad proportion `{}`", &record[3])))?;
        if !(0.0..=1.0).contains(&proportion) {
            return Err(fmt(format!("proportion {proportion} outside [0, 1]")));
        }
        if exclusions.contains(&word) {
            excluded.insert(word);
            continue;
        }
        match wb.categories.get(&word) {
            Some(prev) if prev != &record[1] => {
                return Err(fmt(format!(
                    "`{word}` has conflicting categories `{prev}` and `{}`",
                    &record[1]
                )));
            }
            Some(_) => {}
            None => {
                wb.categories.insert(word.clone(), record[1].to_owned());
            }
        }
        let curve = wb.table.curves.entry(word.clone()).or_default();
        if curve.iter().any(|&(m, _)| m == month) {
            return Err(fmt(format!("duplicate month {month} for `{word}`")));
        }
        curve.push((month, proportion));
    }
    for curve in wb.table.curves.values_mut() {
        curve.sort_by_key(|p| p.0);
    }
    wb.excluded = excluded.into_iter().collect();
    Ok(wb)
}

pub fn load_wordbank(path: &Path, exclusions: Option<&Path>) -> Result<Wordbank, WordbankError> {
    let excl = match exclusions {
        Some(p) => read_exclusions(BufReader::new(File::open(p)?))?,
        None => BTreeSet::new(),
    };
    read_wordbank(File::open(path)?, &excl)
}

pub fn write_wordbank_csv<W: Write>(out: W, wb: &Wordbank) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for (word, curve) in &wb.table.curves {
        let cat = wb.categories.get(word).map(String::as_str).unwrap_or("other");
        for &(month, p) in curve {
            w.write_record([word.as_str(), cat, &month.to_string(), &p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Age (months) at which the production proportion first reaches
/// `threshold`; interpolated linearly from the preceding month if asked.
pub fn child_aoa(table: &ProportionTable, word: &str, threshold: f64, interpolate: bool) -> Result<f64, WordbankError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(WordbankError::InvalidThreshold(threshold));
    }
    let curve = table
        .curve(word)
        .ok_or_else(|| WordbankError::UnknownWord(word.to_owned()))?;
    let i = curve
        .iter()
        .position(|&(_, p)| p >= threshold)
        .ok_or_else(|| WordbankError::NeverAcquired(word.to_owned()))?;
    let (m1, p1) = curve[i];
    if !interpolate || i == 0 || p1 == threshold {
        return Ok(m1 as f64);
    }
    let (m0, p0) = curve[i - 1];
    Ok(m0 as f64 + (threshold - p0) / (p1 - p0) * (m1 - m0) as f64)
}

/// Child AoA for every word, plus those that never reach the threshold.
pub fn child_aoa_table(
    table: &ProportionTable,
    threshold: f64,
    interpolate: bool,
) -> Result<(BTreeMap<String, f64>, Vec<String>), WordbankError> {
    let mut aoa = BTreeMap::new();
    let mut never = Vec::new();
    for word in table.words() {
        match child_aoa(table, word, threshold, interpolate) {
            Ok(v) => {
                aoa.insert(word.to_owned(), v);
            }
            Err(WordbankError::NeverAcquired(w)) => never.push(w),
            Err(e) => return Err(e),
        }
    }
    Ok((aoa, never))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, u32, f64)]) -> ProportionTable {
        let mut t = ProportionTable::default();
        for &(w, m, p) in rows {
            t.curves.entry(w.into()).or_default().push((m, p));
        }
        t
    }

    #[test]
    fn aoa_examples() {
        let t = table(&[
            ("dog", 24, 0.4),
            ("dog", 25, 0.6),
            ("cup", 18, 0.1),
            ("cup", 20, 0.5),
            ("the", 16, 0.1),
            ("the", 30, 0.3),
        ]);
        assert!((child_aoa(&t, "dog", 0.5, true).unwrap() - 24.5).abs() < 1e-12);
        assert_eq!(child_aoa(&t, "dog", 0.5, false).unwrap(), 25.0);
        assert_eq!(child_aoa(&t, "cup", 0.5, true).unwrap(), 20.0);
        assert_eq!(child_aoa(&t, "cup", 0.5, false).unwrap(), 20.0);
        assert!(matches!(
            child_aoa(&t, "the", 0.5, true),
            Err(WordbankError::NeverAcquired(_))
        ));
        assert!(matches!(
            child_aoa(&t, "cat", 0.5, true),
            Err(WordbankError::UnknownWord(_))
        ));
        let (aoa, never) = child_aoa_table(&t, 0.5, true).unwrap();
        assert_eq!(aoa.len(), 2);
        assert_eq!(never, vec!["the".to_string()]);
    }

    #[test]
    fn loads_minimal_csv_with_exclusions() {
        let csv = "word,category,month,proportion\ndog,nouns,16,0.2\ndog,nouns,18,0.7\nrun,verbs,16,0.1\nrun,verbs,18,0.3\nbrother,people,18,0.6\n";
        let wb = read_wordbank(csv.as_bytes(), &BTreeSet::new()).unwrap();
        assert_eq!(wb.table.len(), 3);
        assert_eq!(wb.category("dog"), Some(LexicalCategory::Noun));
        assert_eq!(wb.category("run"), Some(LexicalCategory::Predicate));
        assert_eq!(wb.category("brother"), Some(LexicalCategory::Other));

        let excl = read_exclusions("# misannotated\nbrother\n\n".as_bytes()).unwrap();
        let wb = read_wordbank(csv.as_bytes(), &excl).unwrap();
        assert_eq!(wb.table.len(), 2);
        assert!(wb.table.curve("brother").is_none());
        assert_eq!(wb.excluded, vec!["brother".to_string()]);
    }

    #[test]
    fn format_errors_carry_lines() {
        let bad = [
            ("word,cat,month,proportion\n", 1),
            ("word,category,month,proportion\ndog,nouns,16,0.2\ndog,nouns,x,0.2\n", 3),
            ("word,category,month,proportion\ndog,nouns,16,1.2\n", 2),
            (
                "word,category,month,proportion\ndog,nouns,16,0.2\ndog,nouns,16,0.3\n",
                3,
            ),
            (
                "word,category,month,proportion\ndog,nouns,16,0.2\ndog,verbs,17,0.3\n",
                3,
            ),
        ];
        for (text, want) in bad {
            match read_wordbank(text.as_bytes(), &BTreeSet::new()) {
                Err(WordbankError::Format { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn reserialization_is_lossless() {
        let csv = "word,category,month,proportion\nup,adverbs,20,0.35\nball,nouns,18,0.125\nball,nouns,16,0.05\n";
        let wb = read_wordbank(csv.as_bytes(), &BTreeSet::new()).unwrap();
        let mut buf = Vec::new();
        write_wordbank_csv(&mut buf, &wb).unwrap();
        let again = read_wordbank(&buf[..], &BTreeSet::new()).unwrap();
        assert_eq!(again, wb);
        assert_eq!(again.raw_category("up"), Some("adverbs"));
    }

    #[test]
    fn exclusion_arithmetic_on_norms_sized_fixture() {
        // 305 words of which 43 are flagged, leaving 262.
        let mut csv = String::from("word,category,month,proportion\n");
        for i in 0..305 {
            for m in [16, 20, 24, 28] {
                csv.push_str(&format!("w{i},nouns,{m},{}\n", (m - 14) as f64 / 16.0));
            }
        }
        let excl: BTreeSet<String> = (0..305)
            .filter(|i| i % 7 == 3)
            .take(43)
            .map(|i| format!("w{i}"))
            .collect();
        assert_eq!(excl.len(), 43);
        let wb = read_wordbank(csv.as_bytes(), &excl).unwrap();
        assert_eq!(wb.table.len(), 262);
        assert_eq!(wb.excluded.len(), 43);
    }

    proptest! {
        #[test]
        fn threshold_monotone_and_bracketed(
            props in prop::collection::vec(0.0f64..=1.0, 2..12),
            t1 in 0.05f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let rows: Vec<(&str, u32, f64)> = props.iter().enumerate().map(|(i, &p)| ("w", 12 + 2 * i as u32, p)).collect();
            let t = table(&rows);
            let t2 = (t1 + dt).min(1.0);
            if let (Ok(a), Ok(b)) = (child_aoa(&t, "w", t1, true), child_aoa(&t, "w", t2, true)) {
                prop_assert!(b >= a - 1e-12);
            }
            if let Ok(a) = child_aoa(&t, "w", t1, true) {
                let exact = child_aoa(&t, "w", t1, false).unwrap();
                prop_assert!(a <= exact && a >= exact - 2.0);
            }
        }
    }
}
