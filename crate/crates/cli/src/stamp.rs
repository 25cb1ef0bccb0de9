//! Stage fingerprints. Every output carries the fingerprint of the
//! configuration that produced it, and every stage checks the fingerprints
//! of its inputs against the current configuration.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TAG: &str = "lexsig";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sample,
    Score,
    Signatures,
    Aoa,
    Analyze,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Score => "score",
            Stage::Signatures => "signatures",
            Stage::Aoa => "aoa",
            Stage::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub stage: Stage,
    pub fingerprint: String,
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} fingerprint={}", self.stage.as_str(), self.fingerprint)
    }
}

/// First 16 hex digits of the SHA-256 of the JSON encoding of `parts`.
pub fn fingerprint<T: Serialize>(parts: &T) -> String {
    let json = serde_json::to_vec(parts).expect("fingerprint parts serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Content digest of a file, or of every `.jsonl` file below a directory.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_jsonl(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&f)?);
            hasher.update([0]);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        hasher.update(bytes);
    }
    Ok(hex::encode(&hasher.finalize()[..8]))
}

pub fn collect_jsonl(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_jsonl(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

/// Writes through a temporary file so readers never see a partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Text output (CSV, JSONL, plain text) with a `# lexsig ...` first line.
pub fn write_text(path: &Path, stamp: &Stamp, body: &[u8]) -> Result<()> {
    let mut bytes = format!("# {TAG} {stamp}\n").into_bytes();
    bytes.extend_from_slice(body);
    write_atomic(path, &bytes)
}

/// SVG output with the stamp as its leading comment.
pub fn write_svg(path: &Path, stamp: &Stamp, svg: &str) -> Result<()> {
    write_atomic(path, format!("<!-- {TAG} {stamp} -->\n{svg}").as_bytes())
}

/// JSON output with the stamp as the `lexsig` member of a wrapping object.
pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, value: &T) -> Result<()> {
    let doc = serde_json::json!({ TAG: stamp.to_string(), "content": value });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn mismatch(path: &Path, found: &str, expected: &Stamp) -> CliError {
    CliError::data(format!(
        "{} was produced by a different configuration ({found}; expected {expected}); rerun `lexsig {}`",
        path.display(),
        expected.stage.as_str()
    ))
}

fn missing(path: &Path, expected: &Stamp) -> CliError {
    CliError::data(format!(
        "{} is missing; run `lexsig {}` first",
        path.display(),
        expected.stage.as_str()
    ))
}

/// Reads a stamped text file and returns its body after checking the stamp.
pub fn read_text(path: &Path, expected: &Stamp) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|_| missing(path, expected))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let found = first.strip_prefix(&format!("# {TAG} ")).unwrap_or("no stamp");
    if found != expected.to_string() {
        return Err(mismatch(path, found, expected));
    }
    Ok(body.to_owned())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, expected: &Stamp) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| missing(path, expected))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let found = doc.get(TAG).and_then(|v| v.as_str()).unwrap_or("no stamp").to_owned();
    if found != expected.to_string() {
        return Err(mismatch(path, &found, expected));
    }
    serde_json::from_value(doc["content"].take()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamped_text_round_trips_and_rejects_foreign_stamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.csv");
        let stamp = Stamp {
            stage: Stage::Aoa,
            fingerprint: fingerprint(&("x", 1)),
        };
        write_text(&path, &stamp, b"h\n1\n").unwrap();
        assert_eq!(read_text(&path, &stamp).unwrap(), "h\n1\n");
        let other = Stamp {
            fingerprint: fingerprint(&("x", 2)),
            ..stamp.clone()
        };
        let err = read_text(&path, &other).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("lexsig aoa"));
        assert_eq!(read_text(&dir.path().join("none"), &stamp).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stamped_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let stamp = Stamp {
            stage: Stage::Sample,
            fingerprint: "00".into(),
        };
        write_json(&path, &stamp, &vec![1, 2]).unwrap();
        let back: Vec<i32> = read_json(&path, &stamp).unwrap();
        assert_eq!(back, vec![1, 2]);
    }

    #[test]
    fn fingerprints_are_stable_and_sensitive() {
        assert_eq!(fingerprint(&[1, 2]), fingerprint(&[1, 2]));
        assert_ne!(fingerprint(&[1, 2]), fingerprint(&[2, 1]));
        assert_eq!(fingerprint(&[1]).len(), 16);
    }
}
