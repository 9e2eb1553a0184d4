use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fuzzpipe::config::{load_config, CampaignConfig, ConfigError};
use fuzzpipe::orchestrator::{self, CampaignOptions, OrchestratorError};

#[derive(Parser)]
#[command(
    name = "fuzzpipe",
    version,
    about = "Fuzzing campaign orchestration and crash triage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fuzzer until a stop condition fires.
    Run(Common),
    /// Minimize the corpus.
    Cmin(Common),
    /// Replay, deduplicate and cluster collected crashes.
    Casr(Common),
    /// Collect line coverage of the corpus.
    Pycov(Common),
    /// run, cmin, casr and pycov in sequence.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Campaign config file.
    #[arg(short, long, value_name = "FILE")]
    config: PathBuf,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_SPAWN: u8 = 2;
const EXIT_OTHER: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, stage) = match &cli.command {
        Command::Run(c) => (c, "run"),
        Command::Cmin(c) => (c, "cmin"),
        Command::Casr(c) => (c, "casr"),
        Command::Pycov(c) => (c, "pycov"),
        Command::Pipeline(c) => (c, "pipeline"),
    };
    let config = match effective_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fuzzpipe: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if common.print_config {
        print!("{}", config.to_toml_string());
        return ExitCode::SUCCESS;
    }
    match dispatch(stage, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fuzzpipe {stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn effective_config(common: &Common) -> Result<CampaignConfig, ConfigError> {
    let mut config = load_config(&common.config)?;
    if let Some(out) = &common.output {
        config.output_dir = absolute(out);
    }
    config.validate()?;
    Ok(config)
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn exit_code(e: &OrchestratorError) -> u8 {
    match e {
        OrchestratorError::Config(_) => EXIT_CONFIG,
        OrchestratorError::SpawnFailure { .. } => EXIT_SPAWN,
        _ => EXIT_OTHER,
    }
}

fn campaign_options() -> CampaignOptions {
    let flag = Arc::new(AtomicBool::new(false));
    let handler_flag = Arc::clone(&flag);
    if let Err(e) = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install signal handler: {e}");
    }
    CampaignOptions {
        interrupt: Some(flag),
        ..CampaignOptions::default()
    }
}

fn dispatch(stage: &str, config: &CampaignConfig) -> Result<(), OrchestratorError> {
    match stage {
        "run" => {
            let state = orchestrator::run_campaign_with(config, &campaign_options())?;
            eprintln!(
                "run: stopped ({}), coverage {}, {} crash(es)",
                state.stop_reason.map_or("-".to_string(), |r| r.to_string()),
                state.coverage_counter,
                state.crashes_found
            );
        }
        "cmin" => {
            let out = orchestrator::stage_cmin(config)?;
            eprintln!("cmin: {} -> {} seed(s)", out.seeds_before, out.seeds_after);
        }
        "casr" => {
            let out = orchestrator::stage_casr(config)?;
            print!("{}", out.summary);
            if !out.not_reproduced.is_empty() || !out.unparsed.is_empty() {
                eprintln!(
                    "casr: {} not reproduced, {} unparsed",
                    out.not_reproduced.len(),
                    out.unparsed.len()
                );
            }
        }
        "pycov" => {
            let out = orchestrator::stage_pycov(config)?;
            eprintln!(
                "pycov: {} input(s), {} file(s), {} line(s) hit",
                out.inputs, out.files, out.lines_hit
            );
        }
        _ => {
            let report = orchestrator::run_pipeline_with(config, &campaign_options())?;
            let c = &report.counts;
            eprintln!(
                "pipeline: {} crash(es) -> {} deduplicated -> {} cluster(s); corpus {} -> {}; {} line(s) hit",
                c.crashes, c.deduplicated, c.clusters, c.corpus_before_cmin, c.corpus_after_cmin, c.coverage_lines_hit
            );
        }
    }
    Ok(())
}
