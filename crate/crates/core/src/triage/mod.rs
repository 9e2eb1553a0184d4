//! Crash triage: frame filtering, deduplication, similarity, complete-linkage
//! clustering, severity estimation and cluster summaries.

mod cluster;
mod dedup;
mod filter;
mod severity;
mod similarity;
mod summary;

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use cluster::{cluster, cluster_traces, complete_linkage};
pub use dedup::{dedup, DedupOutcome, Duplicate};
pub use filter::{
    extract_crashline, filter_trace, FilterRules, FilteredTrace, PatternSet,
    DEFAULT_EXCEPTION_UTILITY_PATTERNS, DEFAULT_FUZZER_PATTERNS, DEFAULT_SANITIZER_PATTERNS,
    DEFAULT_STDLIB_PATTERNS,
};
pub use severity::estimate_severity;
pub use similarity::{dist, pair_weight, similarity, trace_weight, SimilarityParams};
pub use summary::summarize;

use crate::model::{report_id, CrashReport};
use crate::parsers::{self, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriageError {
    #[error("invalid filter pattern `{pattern}`: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("invalid similarity parameters: {0}")]
    InvalidParams(String),
    #[error("cluster references unknown report id {0}")]
    DanglingReference(String),
}

/// Turns captured crash output into a [`CrashReport`].
///
/// The stored trace carries origins assigned by `rules`. When `source_root`
/// is given, relative crashline paths and `$SRC/` paths are resolved
/// against it to read the source snippet.
pub fn build_report(
    raw: &[u8],
    seed_path: impl Into<PathBuf>,
    target_name: &str,
    rules: &FilterRules,
    source_root: Option<&Path>,
    created_at: DateTime<Utc>,
) -> Result<CrashReport, ParseError> {
    let text = parsers::decode_report(raw).into_owned();
    let (trace, kind) = parsers::parse_report(&text)?;
    let trace = rules.annotate(&trace);
    let crashline = extract_crashline(&trace, rules);
    let source_snippet = crashline.as_ref().and_then(|cl| {
        let path = resolve_source(&cl.file, source_root);
        parsers::extract_source_snippet(&path, cl.line, parsers::DEFAULT_SNIPPET_RADIUS)
    });
    Ok(CrashReport {
        id: report_id(&text),
        seed_path: seed_path.into(),
        severity: estimate_severity(&kind),
        kind,
        trace,
        crashline,
        source_snippet,
        target_name: target_name.to_string(),
        raw_report: text,
        created_at,
    })
}

fn resolve_source(file: &str, root: Option<&Path>) -> PathBuf {
    let Some(root) = root else {
        return PathBuf::from(file);
    };
    match file.strip_prefix("$SRC/") {
        Some(rel) => root.join(rel),
        None if Path::new(file).is_relative() => root.join(file),
        None => PathBuf::from(file),
    }
}
