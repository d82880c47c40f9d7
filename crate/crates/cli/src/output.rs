//! Artifact writers.
//!
//! CSV files have a header row; floats are written with 17 significant
//! digits (`{:.16e}`), so they read back exactly.
//!
//! `hist.bin` (terminal-level histogram), little endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `SLIH` |
//! | 4 | `u32` format version, currently 1 |
//! | 4 | `u32` number of levels `L` |
//! | 8 | `u64` total count |
//! | 8·L | `u64` count per level `0..L` |

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub const HIST_MAGIC: &[u8; 4] = b"SLIH";
pub const HIST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed histogram: {0}")]
    Histogram(String),
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Collects artifacts for one output directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        fs::create_dir_all(root).map_err(|source| OutputError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn artifacts(&self) -> &[String] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), OutputError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|source| OutputError::Io { path, source })?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), OutputError> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), OutputError> {
        let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_histogram(&mut self, name: &str, counts: &[u64]) -> Result<(), OutputError> {
        self.write_bytes(name, &encode_histogram(counts))
    }
}

pub fn encode_histogram(counts: &[u64]) -> Vec<u8> {
    let mut b = Vec::with_capacity(20 + 8 * counts.len());
    b.extend_from_slice(HIST_MAGIC);
    b.extend_from_slice(&HIST_VERSION.to_le_bytes());
    b.extend_from_slice(&(counts.len() as u32).to_le_bytes());
    b.extend_from_slice(&counts.iter().sum::<u64>().to_le_bytes());
    for c in counts {
        b.extend_from_slice(&c.to_le_bytes());
    }
    b
}

pub fn decode_histogram(bytes: &[u8]) -> Result<Vec<u64>, OutputError> {
    let bad = |m: &str| OutputError::Histogram(m.to_string());
    if bytes.len() < 20 || &bytes[..4] != HIST_MAGIC {
        return Err(bad("missing SLIH header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if u32_at(4) != HIST_VERSION {
        return Err(bad("unsupported version"));
    }
    let levels = u32_at(8) as usize;
    if bytes.len() != 20 + 8 * levels {
        return Err(bad("length does not match level count"));
    }
    let counts: Vec<u64> = (0..levels).map(|k| u64_at(20 + 8 * k)).collect();
    if counts.iter().sum::<u64>() != u64_at(12) {
        return Err(bad("total does not match counts"));
    }
    Ok(counts)
}

/// `P(τ <= s)` table in the `value (±2σ)` layout.
pub fn format_tau_table(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::new();
    for (th, p, se) in rows {
        let _ = writeln!(s, "P(tau <= {th:.4}) = {p:.4} (±{:.4})", 2.0 * se);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_round_trip() {
        let counts = vec![3, 0, 7, 1];
        let b = encode_histogram(&counts);
        assert_eq!(&b[..4], b"SLIH");
        assert_eq!(b.len(), 20 + 32);
        assert_eq!(decode_histogram(&b).unwrap(), counts);
        let mut broken = b.clone();
        broken[20] ^= 1;
        assert!(decode_histogram(&broken).is_err());
        assert!(decode_histogram(&b[..19]).is_err());
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
