//! Corpus minimization.
//!
//! Each coverage feature is owned by the smallest seed that exhibits it
//! (size in bytes, then path). The kept set is the set of owners. The result
//! preserves the union of features but is not a minimum set cover.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::executor::{ExecError, ExecMode, TargetExecutor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCoverage {
    pub seed_path: PathBuf,
    pub size_bytes: u64,
    pub features: BTreeSet<u64>,
    /// False when the seed crashed, hung, or could not be read. Such seeds
    /// have no features and are never kept.
    pub executable: bool,
}

impl SeedCoverage {
    pub fn new(
        seed_path: impl Into<PathBuf>,
        size_bytes: u64,
        features: impl IntoIterator<Item = u64>,
    ) -> Self {
        SeedCoverage {
            seed_path: seed_path.into(),
            size_bytes,
            features: features.into_iter().collect(),
            executable: true,
        }
    }

    pub fn unexecutable(seed_path: impl Into<PathBuf>, size_bytes: u64) -> Self {
        SeedCoverage {
            seed_path: seed_path.into(),
            size_bytes,
            features: BTreeSet::new(),
            executable: false,
        }
    }
}

/// Returns the kept seed paths, sorted.
pub fn minimize(seeds: &[SeedCoverage]) -> Vec<PathBuf> {
    let mut owner: BTreeMap<u64, &SeedCoverage> = BTreeMap::new();
    for seed in seeds.iter().filter(|s| s.executable) {
        for &feature in &seed.features {
            owner
                .entry(feature)
                .and_modify(|cur| {
                    if (seed.size_bytes, &seed.seed_path) < (cur.size_bytes, &cur.seed_path) {
                        *cur = seed;
                    }
                })
                .or_insert(seed);
        }
    }
    let kept: BTreeSet<&Path> = owner.values().map(|s| s.seed_path.as_path()).collect();
    kept.into_iter().map(Path::to_path_buf).collect()
}

/// Runs every seed once in coverage mode on up to `workers` threads.
/// Output order follows `seed_paths`.
pub fn collect_seed_coverage(
    seed_paths: &[PathBuf],
    executor: &dyn TargetExecutor,
    workers: usize,
) -> Result<Vec<SeedCoverage>, ExecError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExecError::Io {
            context: "building worker pool".into(),
            source: io::Error::other(e),
        })?;
    pool.install(|| {
        seed_paths
            .par_iter()
            .map(|path| {
                let Ok(meta) = fs::metadata(path) else {
                    return Ok(SeedCoverage::unexecutable(path, 0));
                };
                let run = executor.execute(path, ExecMode::Coverage)?;
                if run.crashed() {
                    return Ok(SeedCoverage::unexecutable(path, meta.len()));
                }
                let features = run.coverage.map(|c| c.feature_ids()).unwrap_or_default();
                Ok(SeedCoverage::new(path, meta.len(), features))
            })
            .collect()
    })
}

/// Regular, non-hidden files directly inside `dir`, sorted. A missing
/// directory is an empty corpus.
pub fn list_seeds(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut seeds = Vec::new();
    for entry in entries {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            seeds.push(entry.path());
        }
    }
    seeds.sort();
    Ok(seeds)
}

/// Replaces the contents of `out_dir` with copies of `kept`.
pub fn write_corpus(kept: &[PathBuf], out_dir: &Path) -> io::Result<()> {
    // Copy through a staging dir so `kept` may live inside `out_dir`.
    let staging = out_dir.with_extension("staging");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    for path in kept {
        let name = path
            .file_name()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "seed without file name"))?;
        fs::copy(path, staging.join(name))?;
    }
    if out_dir.exists() {
        fs::remove_dir_all(out_dir)?;
    }
    fs::rename(&staging, out_dir)
}
