//! Corpus manifests: duplicate filtering and hash-based train/validation/test
//! assignment.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use md5::{Digest, Md5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::{xxh3_128, xxh3_64_with_seed};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("manifest line {line}: {problem}")]
    Manifest { line: usize, problem: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigestAlgorithm {
    #[default]
    Xxh3_128,
    Md5,
}

impl DigestAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            DigestAlgorithm::Xxh3_128 => "xxh3-128",
            DigestAlgorithm::Md5 => "md5",
        }
    }

    pub fn digest(self, bytes: &[u8]) -> u128 {
        match self {
            DigestAlgorithm::Xxh3_128 => xxh3_128(bytes),
            DigestAlgorithm::Md5 => u128::from_be_bytes(Md5::digest(bytes).into()),
        }
    }
}

impl FromStr for DigestAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xxh3-128" => Ok(DigestAlgorithm::Xxh3_128),
            "md5" => Ok(DigestAlgorithm::Md5),
            other => Err(format!("unknown digest algorithm `{other}`")),
        }
    }
}

/// One input file; `content` is `Err` when the file could not be read.
pub struct CorpusFile {
    pub path: String,
    pub content: Result<Vec<u8>, String>,
}

#[derive(Clone, Debug)]
pub struct DedupFilters {
    /// Directory names; any file below a matching path component is excluded.
    pub dir_names: Vec<String>,
    /// Exact file basenames to exclude.
    pub file_names: Vec<String>,
}

impl Default for DedupFilters {
    fn default() -> Self {
        DedupFilters {
            dir_names: vec!["node_modules".to_string()],
            file_names: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub digest: Option<u128>,
    pub size: u64,
    pub split: Option<Split>,
    pub excluded_reason: Option<String>,
}

impl ManifestEntry {
    pub fn is_included(&self) -> bool {
        self.excluded_reason.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusManifest {
    pub algorithm: DigestAlgorithm,
    pub entries: Vec<ManifestEntry>,
}

/// Drops filtered paths and repeated contents. The first occurrence of a
/// digest wins; every exclusion keeps its reason.
pub fn dedup(files: Vec<CorpusFile>, filters: &DedupFilters, algorithm: DigestAlgorithm) -> CorpusManifest {
    type Hashed = (String, Result<(u128, u64), String>);
    let hashed: Vec<Hashed> = files
        .into_par_iter()
        .map(|f| {
            let digest = f
                .content
                .map(|bytes| (algorithm.digest(&bytes), bytes.len() as u64));
            (f.path, digest)
        })
        .collect();

    let mut seen = HashSet::new();
    let entries = hashed
        .into_iter()
        .map(|(path, digest)| {
            let (digest, size, reason) = match digest {
                Err(e) => (None, 0, Some(format!("unreadable: {e}"))),
                Ok((digest, size)) => {
                    let reason = if in_filtered_dir(&path, &filters.dir_names) {
                        Some("dir-filter".to_string())
                    } else if filters.file_names.iter().any(|n| basename(&path) == n) {
                        Some("name-filter".to_string())
                    } else if !seen.insert(digest) {
                        Some("duplicate-digest".to_string())
                    } else {
                        None
                    };
                    (Some(digest), size, reason)
                }
            };
            ManifestEntry {
                path,
                digest,
                size,
                split: None,
                excluded_reason: reason,
            }
        })
        .collect();
    CorpusManifest { algorithm, entries }
}

fn basename(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

fn in_filtered_dir(path: &str, dirs: &[String]) -> bool {
    let mut components: Vec<&str> = path.split(['/', '\\']).collect();
    components.pop();
    components.iter().any(|c| dirs.iter().any(|d| d == c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CorpusError::Ratios(format!("{parts:?} has a negative or non-finite part")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Ratios(format!("{parts:?} sums to {sum}")));
        }
        Ok(())
    }
}

/// Maps a digest to [0, 1) for a given seed.
pub fn split_point(digest: u128, seed: u64) -> f64 {
    let h = xxh3_64_with_seed(&digest.to_le_bytes(), seed);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Assigns every included entry to a split from its digest alone, so adding
/// files never moves existing ones.
pub fn split(mut manifest: CorpusManifest, ratios: SplitRatios, seed: u64) -> Result<CorpusManifest, CorpusError> {
    ratios.validate()?;
    for entry in &mut manifest.entries {
        entry.split = match (entry.is_included(), entry.digest) {
            (true, Some(digest)) => {
                let u = split_point(digest, seed);
                Some(if u < ratios.train {
                    Split::Train
                } else if u < ratios.train + ratios.validation {
                    Split::Validation
                } else {
                    Split::Test
                })
            }
            _ => None,
        };
    }
    Ok(manifest)
}

const HEADER: &str = "path\tdigest\tsize\tsplit\texcluded_reason";

impl CorpusManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#digest-algorithm\t{}\n{HEADER}\n", self.algorithm.as_str());
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                crate::escape::escape(&e.path, &['%', '\t', '\n', '\r']),
                e.digest.map(|d| format!("{d:032x}")).unwrap_or_default(),
                e.size,
                e.split.map(|s| s.as_str()).unwrap_or_default(),
                e.excluded_reason
                    .as_deref()
                    .map(|r| crate::escape::escape(r, &['%', '\t', '\n', '\r']))
                    .unwrap_or_default(),
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, problem: String| CorpusError::Manifest { line, problem };
        let mut lines = text.lines().enumerate();
        let algorithm = match lines.next() {
            Some((_, l)) if l.starts_with("#digest-algorithm\t") => l["#digest-algorithm\t".len()..]
                .parse()
                .map_err(|e| bad(1, e))?,
            _ => return Err(bad(1, "missing #digest-algorithm header".into())),
        };
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            _ => return Err(bad(2, "missing column header".into())),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(n, format!("expected 5 columns, found {}", cols.len())));
            }
            entries.push(ManifestEntry {
                path: crate::escape::unescape(cols[0]),
                digest: if cols[1].is_empty() {
                    None
                } else {
                    Some(u128::from_str_radix(cols[1], 16).map_err(|e| bad(n, e.to_string()))?)
                },
                size: cols[2].parse().map_err(|e: std::num::ParseIntError| bad(n, e.to_string()))?,
                split: if cols[3].is_empty() {
                    None
                } else {
                    Some(cols[3].parse().map_err(|e| bad(n, e))?)
                },
                excluded_reason: (!cols[4].is_empty()).then(|| crate::escape::unescape(cols[4])),
            });
        }
        Ok(CorpusManifest { algorithm, entries })
    }

    pub fn included(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.is_included() && e.split == Some(split))
    }
}

/// Lists files under `root` whose names end with one of `suffixes`, as paths
/// relative to `root` in sorted order, and reads them.
pub fn scan_dir(root: &Path, suffixes: &[&str]) -> Vec<CorpusFile> {
    let mut paths: Vec<_> = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter(|e| {
            let name = e.file_name().to_string_lossy();
            suffixes.iter().any(|s| name.ends_with(s))
        })
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let rel = p
                .strip_prefix(root)
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            CorpusFile {
                path: rel,
                content: std::fs::read(&p).map_err(|e| e.to_string()),
            }
        })
        .collect()
}
