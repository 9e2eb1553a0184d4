//! Campaign lifecycle and the four pipeline stages: fuzzing run, corpus
//! minimization, crash triage and coverage collection.
//!
//! Every stage works against the artifact layout under the configured output
//! directory (see [`ArtifactLayout`]) and holds an exclusive lock on it while
//! running.

mod campaign;
mod layout;
mod pipeline;
mod state;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::time::Duration;

use thiserror::Error;

pub use campaign::{expand_fuzz_command, run_campaign, run_campaign_with, CampaignOptions};
pub use layout::{ArtifactLayout, OutputLock};
pub use pipeline::{
    run_pipeline, run_pipeline_with, stage_casr, stage_cmin, stage_pycov, CampaignSummary,
    CasrOutcome, CminOutcome, CoverageOutcome, PipelineCounts, PipelineReport, StageTiming,
    TriageTiming,
};
pub use state::{evaluate_stop, parse_fuzzer_stats, CampaignState, StopReason};

use crate::config::{CampaignConfig, ConfigError};
use crate::corpus;
use crate::executor::{CommandExecutor, ExecError};
use crate::triage::TriageError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot spawn `{program}`: {source}")]
    SpawnFailure { program: String, source: io::Error },
    #[error("output directory busy: {0}")]
    Locked(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Triage(#[from] TriageError),
}

impl From<ExecError> for OrchestratorError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Unavailable { program, source } => {
                OrchestratorError::SpawnFailure { program, source }
            }
            ExecError::Io { context, source } => OrchestratorError::Io { context, source },
        }
    }
}

pub(crate) fn io_err(context: &str, source: io::Error) -> OrchestratorError {
    OrchestratorError::Io {
        context: context.to_string(),
        source,
    }
}

fn lock(layout: &ArtifactLayout) -> Result<OutputLock, OrchestratorError> {
    OutputLock::acquire(layout).map_err(|e| match e.kind() {
        io::ErrorKind::AlreadyExists => OrchestratorError::Locked(e.to_string()),
        _ => io_err("locking output dir", e),
    })
}

fn open_log(layout: &ArtifactLayout, stage: &str) -> Result<File, OrchestratorError> {
    let path = layout.log(stage);
    fs::create_dir_all(path.parent().expect("logs dir"))
        .map_err(|e| io_err("creating logs dir", e))?;
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err("opening log", e))
}

fn executor(config: &CampaignConfig, layout: &ArtifactLayout) -> CommandExecutor {
    CommandExecutor::new(
        config.run_command.clone(),
        Duration::from_secs(config.per_run_timeout_sec),
        layout.scratch(),
    )
}

/// Minimizes the seeds in `source` into the layout's `corpus/`. Returns
/// the seed counts before and after.
///
/// When no seed reports any coverage the target is not emitting coverage at
/// all; the seeds are then copied unchanged rather than all dropped.
fn cmin_corpus(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
    source: &std::path::Path,
    log: &mut File,
) -> Result<(usize, usize), OrchestratorError> {
    let seeds = corpus::list_seeds(source).map_err(|e| io_err("listing corpus", e))?;
    let coverage =
        corpus::collect_seed_coverage(&seeds, &executor(config, layout), config.workers)?;
    let _ = fs::remove_dir_all(layout.scratch());
    let unexecutable = coverage.iter().filter(|s| !s.executable).count();
    let kept = if !seeds.is_empty() && coverage.iter().all(|s| s.features.is_empty()) {
        log::warn!("no seed reported coverage; corpus left unminimized");
        let _ = writeln!(
            log,
            "cmin: no coverage reported by {} seed(s), keeping all",
            seeds.len()
        );
        seeds.clone()
    } else {
        corpus::minimize(&coverage)
    };
    corpus::write_corpus(&kept, &layout.corpus()).map_err(|e| io_err("writing corpus", e))?;
    let _ = writeln!(
        log,
        "cmin: {} seed(s) -> {} kept ({} unexecutable)",
        seeds.len(),
        kept.len(),
        unexecutable
    );
    Ok((seeds.len(), kept.len()))
}
