//! Dynamic-analysis pipeline for fuzz targets.
//!
//! A campaign runs an external coverage-guided fuzzer until coverage stalls
//! or a budget is hit, minimizes the resulting corpus, replays every crash
//! through the target to collect structured reports, and exports line
//! coverage of the minimized corpus.
//!
//! Crash triage ([`triage`]) filters runtime frames out of each stack
//! trace, folds reports with identical filtered traces together, groups the
//! remainder by complete-linkage clustering over a position-weighted trace
//! similarity, and estimates severity from a fixed rule table.

pub mod config;
pub mod corpus;
pub mod coverage;
pub mod executor;
pub mod model;
pub mod orchestrator;
pub mod parsers;
pub mod triage;

pub use config::{load_config, CampaignConfig, ConfigError};
pub use coverage::CoverageMap;
pub use model::{
    AddressClass, Cluster, ClusterDigest, CrashKind, CrashLine, CrashReport, MemoryAccess, Origin,
    Severity, SeverityClass, SourceLine, StackFrame, StackTrace, TriageSummary, TriageTotals,
};
pub use orchestrator::{OrchestratorError, PipelineReport, StopReason};
pub use triage::{FilterRules, SimilarityParams};
