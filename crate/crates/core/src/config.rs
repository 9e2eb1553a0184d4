//! Campaign configuration, one TOML file per target.
//!
//! ```toml
//! [target]
//! name = "loader"
//! fuzz_command = ["./fuzz_loader", "{corpus_dir}", "-artifact_prefix={artifact_dir}/"]
//! run_command = ["python3", "replay_loader.py"]
//! corpus_dir = "corpus"          # default: corpus
//! output_dir = "out"             # default: out
//! source_dir = "src"             # optional, resolves `$SRC/` in traces
//!
//! [run]
//! jobs = 1
//! exit_on_time_sec = 3600
//! max_total_time_sec = 86400
//! crash_budget = 10              # optional
//! per_run_timeout_sec = 30
//! workers = 4
//!
//! [casr]
//! threshold = 0.3
//! theta = 8.0
//! rho = 4.0
//!
//! [filters]                      # each list replaces its default
//! stdlib = ['/lib/python\d']
//! fuzzer = []
//! sanitizer = []
//! exception_utils = []
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triage::{FilterRules, PatternSet, SimilarityParams};

pub const DEFAULT_JOBS: u32 = 1;
pub const DEFAULT_EXIT_ON_TIME_SEC: u64 = 3600;
pub const DEFAULT_MAX_TOTAL_TIME_SEC: u64 = 86_400;
pub const DEFAULT_PER_RUN_TIMEOUT_SEC: u64 = 30;
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{location}: `{key}`: {message}")]
    Parse {
        location: Location,
        key: String,
        message: String,
    },
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub path: Option<PathBuf>,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}:{}:{}", p.display(), self.line, self.column),
            None => write!(f, "{}:{}", self.line, self.column),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub target_name: String,
    /// May contain `{corpus_dir}` and `{artifact_dir}` placeholders.
    pub fuzz_command: Vec<String>,
    /// Receives the input path as its last argument.
    pub run_command: Vec<String>,
    pub jobs: u32,
    pub exit_on_time_sec: u64,
    pub max_total_time_sec: u64,
    pub crash_budget: Option<u64>,
    pub per_run_timeout_sec: u64,
    /// Replay and coverage worker pool size.
    pub workers: usize,
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub source_dir: Option<PathBuf>,
    pub filter_rules: FilterRules,
    pub similarity: SimilarityParams,
}

impl CampaignConfig {
    /// A config with every default applied.
    pub fn new(
        target_name: impl Into<String>,
        fuzz_command: Vec<String>,
        run_command: Vec<String>,
    ) -> Self {
        CampaignConfig {
            target_name: target_name.into(),
            fuzz_command,
            run_command,
            jobs: DEFAULT_JOBS,
            exit_on_time_sec: DEFAULT_EXIT_ON_TIME_SEC,
            max_total_time_sec: DEFAULT_MAX_TOTAL_TIME_SEC,
            crash_budget: None,
            per_run_timeout_sec: DEFAULT_PER_RUN_TIMEOUT_SEC,
            workers: DEFAULT_WORKERS,
            corpus_dir: PathBuf::from("corpus"),
            output_dir: PathBuf::from("out"),
            source_dir: None,
            filter_rules: FilterRules::default(),
            similarity: SimilarityParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                message,
            })
        };
        if self.target_name.trim().is_empty() {
            return invalid("target.name", "must not be empty".into());
        }
        if self.fuzz_command.is_empty() {
            return invalid("target.fuzz_command", "must not be empty".into());
        }
        if self.run_command.is_empty() {
            return invalid("target.run_command", "must not be empty".into());
        }
        if self.jobs < 1 {
            return invalid("run.jobs", format!("must be >= 1, got {}", self.jobs));
        }
        if self.exit_on_time_sec < 1 {
            return invalid("run.exit_on_time_sec", "must be >= 1".into());
        }
        if self.max_total_time_sec < 1 {
            return invalid("run.max_total_time_sec", "must be >= 1".into());
        }
        if self.exit_on_time_sec > self.max_total_time_sec {
            return invalid(
                "run.exit_on_time_sec",
                format!(
                    "{} exceeds max_total_time_sec {}",
                    self.exit_on_time_sec, self.max_total_time_sec
                ),
            );
        }
        if self.crash_budget == Some(0) {
            return invalid("run.crash_budget", "must be >= 1 when set".into());
        }
        if self.per_run_timeout_sec < 1 {
            return invalid("run.per_run_timeout_sec", "must be >= 1".into());
        }
        if self.workers < 1 {
            return invalid("run.workers", "must be >= 1".into());
        }
        self.similarity
            .validate()
            .map_err(|e| ConfigError::Invalid {
                key: "casr".into(),
                message: e.to_string(),
            })
    }

    /// Serializes the effective config back to the TOML schema.
    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig {
            target: RawTarget {
                name: self.target_name.clone(),
                fuzz_command: self.fuzz_command.clone(),
                run_command: self.run_command.clone(),
                corpus_dir: Some(self.corpus_dir.clone()),
                output_dir: Some(self.output_dir.clone()),
                source_dir: self.source_dir.clone(),
            },
            run: RawRun {
                jobs: Some(self.jobs),
                exit_on_time_sec: Some(self.exit_on_time_sec),
                max_total_time_sec: Some(self.max_total_time_sec),
                crash_budget: self.crash_budget,
                per_run_timeout_sec: Some(self.per_run_timeout_sec),
                workers: Some(self.workers),
            },
            casr: RawCasr {
                threshold: Some(self.similarity.threshold),
                theta: Some(self.similarity.theta),
                rho: Some(self.similarity.rho),
            },
            filters: RawFilters {
                stdlib: Some(self.filter_rules.stdlib.patterns().to_vec()),
                fuzzer: Some(self.filter_rules.fuzzer.patterns().to_vec()),
                sanitizer: Some(self.filter_rules.sanitizer.patterns().to_vec()),
                exception_utils: Some(self.filter_rules.exception_utils.patterns().to_vec()),
            },
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    target: RawTarget,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    casr: RawCasr,
    #[serde(default)]
    filters: RawFilters,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    name: String,
    fuzz_command: Vec<String>,
    run_command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_dir: Option<PathBuf>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    jobs: Option<u32>,
    exit_on_time_sec: Option<u64>,
    max_total_time_sec: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    crash_budget: Option<u64>,
    per_run_timeout_sec: Option<u64>,
    workers: Option<usize>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCasr {
    threshold: Option<f64>,
    theta: Option<f64>,
    rho: Option<f64>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilters {
    stdlib: Option<Vec<String>>,
    fuzzer: Option<Vec<String>>,
    sanitizer: Option<Vec<String>>,
    exception_utils: Option<Vec<String>>,
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<CampaignConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let base = if base.as_os_str().is_empty() {
        Path::new(".")
    } else {
        base
    };
    let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
    parse_config(&text, &base).map_err(|e| match e {
        ConfigError::Parse {
            location,
            key,
            message,
        } => ConfigError::Parse {
            location: Location {
                path: Some(path.to_path_buf()),
                ..location
            },
            key,
            message,
        },
        other => other,
    })
}

/// Parses config text; relative paths are joined onto `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<CampaignConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let mut key = err.path().to_string();
        let inner = err.into_inner();
        let message = inner.message().to_string();
        if let Some(field) = unknown_field_name(&message) {
            // Some deserializers already record the offending field.
            if key == "." || key.is_empty() {
                key = field.to_string();
            } else if !key.ends_with(&format!(".{field}")) && key != field {
                key = format!("{key}.{field}");
            }
        }
        let (line, column) = inner
            .span()
            .map(|span| line_col(text, span.start))
            .unwrap_or((1, 1));
        ConfigError::Parse {
            location: Location {
                path: None,
                line,
                column,
            },
            key,
            message,
        }
    })?;

    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
    let patterns = |key: &str, given: Option<Vec<String>>, default: &PatternSet| match given {
        None => Ok(default.clone()),
        Some(list) => PatternSet::new(list).map_err(|e| ConfigError::Invalid {
            key: format!("filters.{key}"),
            message: e.to_string(),
        }),
    };
    let defaults = FilterRules::default();
    let filter_rules = FilterRules {
        stdlib: patterns("stdlib", raw.filters.stdlib, &defaults.stdlib)?,
        fuzzer: patterns("fuzzer", raw.filters.fuzzer, &defaults.fuzzer)?,
        sanitizer: patterns("sanitizer", raw.filters.sanitizer, &defaults.sanitizer)?,
        exception_utils: patterns(
            "exception_utils",
            raw.filters.exception_utils,
            &defaults.exception_utils,
        )?,
    };
    let sim_defaults = SimilarityParams::default();

    let config = CampaignConfig {
        target_name: raw.target.name,
        fuzz_command: raw.target.fuzz_command,
        run_command: raw.target.run_command,
        jobs: raw.run.jobs.unwrap_or(DEFAULT_JOBS),
        exit_on_time_sec: raw.run.exit_on_time_sec.unwrap_or(DEFAULT_EXIT_ON_TIME_SEC),
        max_total_time_sec: raw
            .run
            .max_total_time_sec
            .unwrap_or(DEFAULT_MAX_TOTAL_TIME_SEC),
        crash_budget: raw.run.crash_budget,
        per_run_timeout_sec: raw
            .run
            .per_run_timeout_sec
            .unwrap_or(DEFAULT_PER_RUN_TIMEOUT_SEC),
        workers: raw.run.workers.unwrap_or(DEFAULT_WORKERS),
        corpus_dir: resolve(raw.target.corpus_dir.unwrap_or_else(|| "corpus".into())),
        output_dir: resolve(raw.target.output_dir.unwrap_or_else(|| "out".into())),
        source_dir: raw.target.source_dir.map(resolve),
        filter_rules,
        similarity: SimilarityParams {
            threshold: raw.casr.threshold.unwrap_or(sim_defaults.threshold),
            theta: raw.casr.theta.unwrap_or(sim_defaults.theta),
            rho: raw.casr.rho.unwrap_or(sim_defaults.rho),
        },
    };
    config.validate()?;
    Ok(config)
}

fn unknown_field_name(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |nl| before.len() - nl - 1)
        + 1;
    (line, column)
}
