//! Line coverage: merging per-run maps and exporting lcov / JSON.
//!
//! Counts are capped at 1; a line is either covered or not.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("{file}: executed line {line} exceeds known line count {total}")]
    LineBeyondTotal { file: String, line: u32, total: u32 },
    #[error("{file}: line numbers start at 1")]
    ZeroLine { file: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FileCoverage {
    pub executed: BTreeSet<u32>,
    /// Number of executable lines, when the producer knows it.
    pub total: Option<u32>,
}

/// File path to executed 1-based line numbers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageMap {
    files: BTreeMap<String, FileCoverage>,
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn files(&self) -> &BTreeMap<String, FileCoverage> {
        &self.files
    }

    pub fn get(&self, file: &str) -> Option<&FileCoverage> {
        self.files.get(file)
    }

    pub fn record(&mut self, file: &str, line: u32) -> Result<(), CoverageError> {
        if line == 0 {
            return Err(CoverageError::ZeroLine {
                file: file.to_string(),
            });
        }
        let entry = self.files.entry(file.to_string()).or_default();
        if let Some(total) = entry.total {
            if line > total {
                return Err(CoverageError::LineBeyondTotal {
                    file: file.to_string(),
                    line,
                    total,
                });
            }
        }
        entry.executed.insert(line);
        Ok(())
    }

    pub fn set_total(&mut self, file: &str, total: u32) -> Result<(), CoverageError> {
        let entry = self.files.entry(file.to_string()).or_default();
        if let Some(&max) = entry.executed.iter().next_back() {
            if max > total {
                return Err(CoverageError::LineBeyondTotal {
                    file: file.to_string(),
                    line: max,
                    total,
                });
            }
        }
        entry.total = Some(total);
        Ok(())
    }

    /// Parses the `COV <file>:<line>` sidecar protocol. Other lines and
    /// malformed entries are ignored.
    pub fn from_cov_lines(text: &str) -> CoverageMap {
        let mut map = CoverageMap::new();
        for line in text.lines() {
            let Some(rest) = line.trim_end().strip_prefix("COV ") else {
                continue;
            };
            let Some((file, no)) = rest.rsplit_once(':') else {
                continue;
            };
            if let Ok(no) = no.parse::<u32>() {
                let _ = map.record(file, no);
            }
        }
        map
    }

    /// Opaque feature ids for corpus minimization, one per executed
    /// (file, line).
    pub fn feature_ids(&self) -> BTreeSet<u64> {
        self.files
            .iter()
            .flat_map(|(file, cov)| cov.executed.iter().map(move |&line| feature_id(file, line)))
            .collect()
    }

    pub fn merge_from(&mut self, other: &CoverageMap) {
        for (file, cov) in &other.files {
            let entry = self.files.entry(file.clone()).or_default();
            entry.executed.extend(cov.executed.iter().copied());
            entry.total = match (entry.total, cov.total) {
                (Some(a), Some(b)) if a != b => {
                    log::warn!(
                        "{file}: conflicting line counts {a} and {b}, keeping {}",
                        a.max(b)
                    );
                    Some(a.max(b))
                }
                (a, b) => a.or(b),
            };
            if let (Some(total), Some(&max)) = (entry.total, entry.executed.iter().next_back()) {
                if max > total {
                    log::warn!(
                        "{file}: executed line {max} beyond line count {total}, raising count"
                    );
                    entry.total = Some(max);
                }
            }
        }
    }
}

/// Stable 64-bit id of an executed source line.
pub fn feature_id(file: &str, line: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(file.as_bytes());
    hasher.update(b":");
    hasher.update(line.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Per-file union of executed lines; the known line count is the largest
/// one reported.
pub fn merge(runs: &[CoverageMap]) -> CoverageMap {
    let mut out = CoverageMap::new();
    for run in runs {
        out.merge_from(run);
    }
    out
}

/// lcov tracefile, files sorted by path, one `DA` record per known line.
/// Files without a known line count list only executed lines.
pub fn export_lcov(map: &CoverageMap) -> String {
    let mut out = String::new();
    for (file, cov) in &map.files {
        let _ = writeln!(out, "SF:{file}");
        let found = match cov.total {
            Some(total) => {
                for line in 1..=total {
                    let hit = u8::from(cov.executed.contains(&line));
                    let _ = writeln!(out, "DA:{line},{hit}");
                }
                total as usize
            }
            None => {
                for line in &cov.executed {
                    let _ = writeln!(out, "DA:{line},1");
                }
                cov.executed.len()
            }
        };
        let _ = writeln!(out, "LH:{}", cov.executed.len());
        let _ = writeln!(out, "LF:{found}");
        out.push_str("end_of_record\n");
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonReport {
    files: BTreeMap<String, JsonFile>,
    totals: JsonTotals,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonFile {
    executed: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    percent: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTotals {
    executed: u64,
    total: u64,
}

fn percent(hit: usize, total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (hit as f64 * 100.0 / total as f64 * 100.0).round() / 100.0
}

pub fn export_json(map: &CoverageMap) -> String {
    let mut totals = JsonTotals {
        executed: 0,
        total: 0,
    };
    let files = map
        .files
        .iter()
        .map(|(path, cov)| {
            totals.executed += cov.executed.len() as u64;
            totals.total += u64::from(cov.total.unwrap_or(0));
            let entry = JsonFile {
                executed: cov.executed.iter().copied().collect(),
                total: cov.total,
                percent: cov.total.map(|t| percent(cov.executed.len(), t)),
            };
            (path.clone(), entry)
        })
        .collect();
    serde_json::to_string(&JsonReport { files, totals }).expect("coverage json")
}

/// Reads back the output of [`export_json`].
pub fn parse_json(text: &str) -> Result<CoverageMap, serde_json::Error> {
    let report: JsonReport = serde_json::from_str(text)?;
    let files = report
        .files
        .into_iter()
        .map(|(path, f)| {
            (
                path,
                FileCoverage {
                    executed: f.executed.into_iter().collect(),
                    total: f.total,
                },
            )
        })
        .collect();
    Ok(CoverageMap { files })
}
