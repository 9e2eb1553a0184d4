use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::campaign::{campaign_locked, CampaignOptions};
use super::layout::ArtifactLayout;
use super::state::{CampaignState, StopReason};
use super::{cmin_corpus, executor, io_err, lock, open_log, OrchestratorError};
use crate::config::CampaignConfig;
use crate::corpus;
use crate::coverage::{self, CoverageMap};
use crate::executor::{ExecMode, TargetExecutor};
use crate::model::{now_utc, CrashReport, TriageSummary};
use crate::parsers::ParseError;
use crate::triage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CminOutcome {
    pub seeds_before: usize,
    pub seeds_after: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriageTiming {
    pub reports_collection_sec: f64,
    pub deduplication_sec: f64,
    pub clustering_sec: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CasrOutcome {
    /// Crash inputs found in `crashes/`.
    pub crashes: usize,
    pub reports: usize,
    /// Inputs whose replay exited cleanly.
    pub not_reproduced: Vec<String>,
    /// Inputs whose replay crashed with output no parser recognized.
    pub unparsed: Vec<String>,
    pub deduplicated: usize,
    pub clusters: usize,
    pub summary: TriageSummary,
    pub timing: TriageTiming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageOutcome {
    pub inputs: usize,
    pub files: usize,
    pub lines_hit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub duration_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub stop_reason: Option<StopReason>,
    pub coverage_counter: u64,
    pub crashes_found: u64,
    pub duration_sec: i64,
}

impl From<&CampaignState> for CampaignSummary {
    fn from(s: &CampaignState) -> Self {
        CampaignSummary {
            stop_reason: s.stop_reason,
            coverage_counter: s.coverage_counter,
            crashes_found: s.crashes_found,
            duration_sec: (now_utc() - s.started_at).num_seconds(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounts {
    pub crashes: usize,
    pub reports: usize,
    pub not_reproduced: usize,
    pub unparsed: usize,
    pub deduplicated: usize,
    pub clusters: usize,
    pub corpus_before_cmin: usize,
    pub corpus_after_cmin: usize,
    pub coverage_files: usize,
    pub coverage_lines_hit: usize,
}

/// Machine-readable record of one pipeline run (`pipeline-report.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub target_name: String,
    pub campaign: CampaignSummary,
    pub stages: Vec<StageTiming>,
    pub triage: TriageTiming,
    pub counts: PipelineCounts,
    pub total_duration_sec: f64,
}

/// Fuzz, minimize, triage and collect coverage, then write
/// `pipeline-report.json`.
pub fn run_pipeline(config: &CampaignConfig) -> Result<PipelineReport, OrchestratorError> {
    run_pipeline_with(config, &CampaignOptions::default())
}

pub fn run_pipeline_with(
    config: &CampaignConfig,
    opts: &CampaignOptions,
) -> Result<PipelineReport, OrchestratorError> {
    config.validate()?;
    let layout = ArtifactLayout::new(&config.output_dir);
    let _lock = lock(&layout)?;
    let started = Instant::now();
    let mut stages = Vec::new();
    let mut timed = |name: &str, t: Instant| {
        stages.push(StageTiming {
            stage: name.to_string(),
            duration_sec: t.elapsed().as_secs_f64(),
        })
    };

    let t = Instant::now();
    let state = campaign_locked(config, opts, &layout)?;
    timed("run", t);

    let t = Instant::now();
    let cmin = cmin_locked(config, &layout)?;
    timed("cmin", t);

    let t = Instant::now();
    let casr = casr_locked(config, &layout)?;
    timed("casr", t);

    let t = Instant::now();
    let cov = pycov_locked(config, &layout)?;
    timed("pycov", t);

    let report = PipelineReport {
        target_name: config.target_name.clone(),
        campaign: CampaignSummary::from(&state),
        stages,
        counts: PipelineCounts {
            crashes: casr.crashes,
            reports: casr.reports,
            not_reproduced: casr.not_reproduced.len(),
            unparsed: casr.unparsed.len(),
            deduplicated: casr.deduplicated,
            clusters: casr.clusters,
            corpus_before_cmin: cmin.seeds_before,
            corpus_after_cmin: cmin.seeds_after,
            coverage_files: cov.files,
            coverage_lines_hit: cov.lines_hit,
        },
        triage: casr.timing,
        total_duration_sec: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).expect("pipeline report json");
    fs::write(layout.pipeline_report(), json + "\n")
        .map_err(|e| io_err("writing pipeline report", e))?;
    Ok(report)
}

/// Minimizes the working corpus (`corpus/`, or the configured seed corpus
/// when that is empty) into `corpus/`.
pub fn stage_cmin(config: &CampaignConfig) -> Result<CminOutcome, OrchestratorError> {
    config.validate()?;
    let layout = ArtifactLayout::new(&config.output_dir);
    let _lock = lock(&layout)?;
    cmin_locked(config, &layout)
}

fn working_corpus(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
) -> Result<PathBuf, OrchestratorError> {
    let work = layout.corpus();
    let populated = !corpus::list_seeds(&work)
        .map_err(|e| io_err("listing corpus", e))?
        .is_empty();
    Ok(if populated {
        work
    } else {
        config.corpus_dir.clone()
    })
}

fn cmin_locked(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
) -> Result<CminOutcome, OrchestratorError> {
    let mut log = open_log(layout, "cmin")?;
    let source = working_corpus(config, layout)?;
    let (seeds_before, seeds_after) = cmin_corpus(config, layout, &source, &mut log)?;
    Ok(CminOutcome {
        seeds_before,
        seeds_after,
    })
}

/// Replays every input in `crashes/`, then deduplicates, clusters and
/// summarizes the resulting reports under `casr/`.
pub fn stage_casr(config: &CampaignConfig) -> Result<CasrOutcome, OrchestratorError> {
    config.validate()?;
    let layout = ArtifactLayout::new(&config.output_dir);
    let _lock = lock(&layout)?;
    casr_locked(config, &layout)
}

enum Replay {
    Report(Box<CrashReport>),
    NotReproduced,
    Unparsed(Vec<u8>),
}

fn crash_inputs(layout: &ArtifactLayout) -> Result<Vec<PathBuf>, OrchestratorError> {
    Ok(corpus::list_seeds(&layout.crashes())
        .map_err(|e| io_err("listing crashes", e))?
        .into_iter()
        .filter(|p| p.extension().is_none_or(|ext| ext != "partial"))
        .collect())
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, OrchestratorError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| io_err("building worker pool", std::io::Error::other(e)))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn casr_locked(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
) -> Result<CasrOutcome, OrchestratorError> {
    let mut log = open_log(layout, "casr")?;
    let inputs = crash_inputs(layout)?;
    let _ = fs::remove_dir_all(layout.casr());
    fs::create_dir_all(layout.reports()).map_err(|e| io_err("creating reports dir", e))?;

    let t = Instant::now();
    let exec = executor(config, layout);
    let replays: Vec<Result<Replay, OrchestratorError>> =
        worker_pool(config.workers)?.install(|| {
            inputs
                .par_iter()
                .map(|input| replay_crash(config, &exec, input))
                .collect()
        });
    let mut reports = Vec::new();
    let mut not_reproduced = Vec::new();
    let mut unparsed = Vec::new();
    for (input, replay) in inputs.iter().zip(replays) {
        let name = file_name(input);
        match replay? {
            Replay::Report(report) => {
                let json = serde_json::to_string_pretty(&report).expect("report json");
                fs::write(
                    layout.reports().join(format!("{name}.report.json")),
                    json + "\n",
                )
                .map_err(|e| io_err("writing report", e))?;
                reports.push(*report);
            }
            Replay::NotReproduced => {
                let _ = writeln!(log, "not-reproduced: {name}");
                not_reproduced.push(name);
            }
            Replay::Unparsed(output) => {
                fs::create_dir_all(layout.unparsed())
                    .map_err(|e| io_err("creating unparsed dir", e))?;
                fs::write(layout.unparsed().join(format!("{name}.txt")), output)
                    .map_err(|e| io_err("writing unparsed output", e))?;
                let _ = writeln!(log, "unparsed: {name}");
                unparsed.push(name);
            }
        }
    }
    let reports_collection_sec = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let deduped = triage::dedup(&reports, &config.filter_rules);
    let deduplication_sec = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let clusters = triage::cluster(&deduped.representatives, &config.similarity);
    let clustering_sec = t.elapsed().as_secs_f64();

    let by_id: BTreeMap<String, CrashReport> = deduped
        .representatives
        .iter()
        .map(|r| (r.id.clone(), r.clone()))
        .collect();
    let summary = triage::summarize(&clusters, &by_id, &deduped.duplicates)?;
    fs::write(layout.summary(), summary.to_string()).map_err(|e| io_err("writing summary", e))?;

    // Each cluster directory gets the reports and inputs of its members and
    // of the duplicates folded into them.
    for cluster in &clusters {
        let dir = layout.cluster_dir(cluster.id);
        fs::create_dir_all(&dir).map_err(|e| io_err("creating cluster dir", e))?;
        let mut seeds: Vec<&Path> = cluster
            .members
            .iter()
            .filter_map(|id| by_id.get(id))
            .map(|r| r.seed_path.as_path())
            .collect();
        seeds.extend(
            deduped
                .duplicates
                .iter()
                .filter(|d| cluster.members.contains(&d.representative))
                .map(|d| d.seed_path.as_path()),
        );
        for seed in seeds {
            let name = file_name(seed);
            let report = layout.reports().join(format!("{name}.report.json"));
            fs::copy(&report, dir.join(format!("{name}.report.json")))
                .map_err(|e| io_err("copying report", e))?;
            if seed.exists() {
                fs::copy(seed, dir.join(&name)).map_err(|e| io_err("copying crash input", e))?;
            }
        }
    }

    let _ = writeln!(
        log,
        "casr: {} crashes, {} reports, {} deduplicated, {} clusters",
        inputs.len(),
        reports.len(),
        deduped.representatives.len(),
        clusters.len()
    );
    Ok(CasrOutcome {
        crashes: inputs.len(),
        reports: reports.len(),
        not_reproduced,
        unparsed,
        deduplicated: deduped.representatives.len(),
        clusters: clusters.len(),
        summary,
        timing: TriageTiming {
            reports_collection_sec,
            deduplication_sec,
            clustering_sec,
        },
    })
}

fn replay_crash(
    config: &CampaignConfig,
    exec: &dyn TargetExecutor,
    input: &Path,
) -> Result<Replay, OrchestratorError> {
    let run = exec.execute(input, ExecMode::Replay)?;
    if !run.crashed() {
        return Ok(Replay::NotReproduced);
    }
    let build = |bytes: &[u8]| {
        triage::build_report(
            bytes,
            input,
            &config.target_name,
            &config.filter_rules,
            config.source_dir.as_deref(),
            now_utc(),
        )
    };
    match build(&run.stderr) {
        Ok(report) => Ok(Replay::Report(Box::new(report))),
        Err(ParseError::UnknownFormat) if !run.stdout.is_empty() => {
            let mut combined = run.stdout.clone();
            combined.extend_from_slice(&run.stderr);
            match build(&combined) {
                Ok(report) => Ok(Replay::Report(Box::new(report))),
                Err(_) => Ok(Replay::Unparsed(combined)),
            }
        }
        Err(_) => Ok(Replay::Unparsed(run.stderr)),
    }
}

/// Replays the working corpus in coverage mode and writes `coverage.lcov`
/// and `coverage.json`.
pub fn stage_pycov(config: &CampaignConfig) -> Result<CoverageOutcome, OrchestratorError> {
    config.validate()?;
    let layout = ArtifactLayout::new(&config.output_dir);
    let _lock = lock(&layout)?;
    pycov_locked(config, &layout)
}

fn pycov_locked(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
) -> Result<CoverageOutcome, OrchestratorError> {
    let mut log = open_log(layout, "pycov")?;
    let source = working_corpus(config, layout)?;
    let seeds = corpus::list_seeds(&source).map_err(|e| io_err("listing corpus", e))?;
    let exec = executor(config, layout);
    let runs: Vec<Result<Option<CoverageMap>, OrchestratorError>> = worker_pool(config.workers)?
        .install(|| {
            seeds
                .par_iter()
                .map(|seed| Ok(exec.execute(seed, ExecMode::Coverage)?.coverage))
                .collect()
        });
    let _ = fs::remove_dir_all(layout.scratch());
    let mut maps = Vec::with_capacity(runs.len());
    for run in runs {
        if let Some(map) = run? {
            maps.push(map);
        }
    }
    let merged = coverage::merge(&maps);
    fs::write(layout.lcov(), coverage::export_lcov(&merged))
        .map_err(|e| io_err("writing lcov", e))?;
    fs::write(
        layout.coverage_json(),
        coverage::export_json(&merged) + "\n",
    )
    .map_err(|e| io_err("writing coverage json", e))?;
    let lines_hit = merged.files().values().map(|f| f.executed.len()).sum();
    let _ = writeln!(
        log,
        "pycov: {} input(s), {} file(s), {} line(s) hit",
        seeds.len(),
        merged.files().len(),
        lines_hit
    );
    Ok(CoverageOutcome {
        inputs: seeds.len(),
        files: merged.files().len(),
        lines_hit,
    })
}
