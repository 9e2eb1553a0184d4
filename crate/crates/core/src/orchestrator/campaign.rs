use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime};

use super::layout::ArtifactLayout;
use super::state::{evaluate_stop, parse_fuzzer_stats, CampaignState, StopReason};
use super::{cmin_corpus, io_err, OrchestratorError};
use crate::config::CampaignConfig;
use crate::corpus;
use crate::executor::kill_group;
use crate::model::now_utc;

/// Timing knobs for [`run_campaign_with`].
#[derive(Clone, Debug)]
pub struct CampaignOptions {
    /// How often artifact directories and stop conditions are checked.
    pub poll_interval: Duration,
    /// Time between the interrupt and the kill when stopping jobs.
    pub grace_period: Duration,
    /// When set to true by another thread, the campaign stops with
    /// [`StopReason::ExternalSignal`].
    pub interrupt: Option<Arc<AtomicBool>>,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            poll_interval: Duration::from_secs(1),
            grace_period: Duration::from_secs(10),
            interrupt: None,
        }
    }
}

struct Shared {
    state: CampaignState,
    log: File,
}

struct Job {
    index: u32,
    child: Child,
    exited: bool,
    readers: Vec<JoinHandle<()>>,
}

/// Substitutes `{corpus_dir}` and `{artifact_dir}` in every argument.
pub fn expand_fuzz_command(argv: &[String], corpus_dir: &Path, artifact_dir: &Path) -> Vec<String> {
    argv.iter()
        .map(|arg| {
            arg.replace("{corpus_dir}", &corpus_dir.display().to_string())
                .replace("{artifact_dir}", &artifact_dir.display().to_string())
        })
        .collect()
}

/// Seeds the working corpus from `corpus_dir` and minimizes it when it
/// holds more than one seed. Returns the resulting seed count.
pub(super) fn prepare_corpus(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
    log: &mut File,
) -> Result<usize, OrchestratorError> {
    let work = layout.corpus();
    fs::create_dir_all(&work).map_err(|e| io_err("creating corpus dir", e))?;
    if config.corpus_dir != work {
        let seeds =
            corpus::list_seeds(&config.corpus_dir).map_err(|e| io_err("listing seed corpus", e))?;
        for seed in seeds {
            let dest = work.join(seed.file_name().expect("listed file"));
            if !dest.exists() {
                fs::copy(&seed, &dest).map_err(|e| io_err("importing seed", e))?;
            }
        }
    }
    let count = corpus::list_seeds(&work)
        .map_err(|e| io_err("listing corpus", e))?
        .len();
    if count > 1 {
        let (_, after) = cmin_corpus(config, layout, &work, log)?;
        return Ok(after);
    }
    Ok(count)
}

/// Runs a fuzzing campaign until a stop condition holds.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignState, OrchestratorError> {
    run_campaign_with(config, &CampaignOptions::default())
}

pub fn run_campaign_with(
    config: &CampaignConfig,
    opts: &CampaignOptions,
) -> Result<CampaignState, OrchestratorError> {
    config.validate()?;
    let layout = ArtifactLayout::new(&config.output_dir);
    let _lock = super::lock(&layout)?;
    campaign_locked(config, opts, &layout)
}

pub(super) fn campaign_locked(
    config: &CampaignConfig,
    opts: &CampaignOptions,
    layout: &ArtifactLayout,
) -> Result<CampaignState, OrchestratorError> {
    let mut log = super::open_log(layout, "run")?;
    let seeds = prepare_corpus(config, layout, &mut log)?;
    let _ = writeln!(log, "corpus ready: {seeds} seed(s)");
    fs::create_dir_all(layout.crashes()).map_err(|e| io_err("creating crashes dir", e))?;

    let shared = Arc::new(Mutex::new(Shared {
        state: CampaignState::new(now_utc()),
        log,
    }));

    let mut jobs = Vec::with_capacity(config.jobs as usize);
    for index in 0..config.jobs {
        match spawn_job(config, layout, index, &shared) {
            Ok(job) => jobs.push(job),
            Err(e) => {
                terminate(&mut jobs, Duration::ZERO);
                return Err(e);
            }
        }
    }

    let mut sweeper = CrashSweeper::new(layout.clone(), config.jobs, opts.poll_interval);
    loop {
        sleep_unless_interrupted(opts.poll_interval, opts.interrupt.as_deref());

        let mut all_exited = true;
        for job in &mut jobs {
            if !job.exited {
                job.exited = matches!(job.child.try_wait(), Ok(Some(_)));
            }
            all_exited &= job.exited;
        }
        let found = sweeper.sweep(all_exited)?;

        let mut guard = shared.lock().expect("campaign state");
        guard.state.crashes_found += found;
        let interrupted = opts
            .interrupt
            .as_ref()
            .is_some_and(|f| f.load(Ordering::SeqCst));
        let reason = if interrupted {
            Some(StopReason::ExternalSignal)
        } else {
            evaluate_stop(&guard.state, config, now_utc())
                .or(all_exited.then_some(StopReason::FuzzerExit))
        };
        if let Some(reason) = reason {
            guard.state.stop(reason);
            let _ = writeln!(guard.log, "stopping: {reason:?}");
            break;
        }
    }

    terminate(&mut jobs, opts.grace_period);
    for job in jobs {
        for reader in job.readers {
            let _ = reader.join();
        }
    }
    let found = sweeper.sweep(true)?;
    let mut guard = shared.lock().expect("campaign state");
    guard.state.crashes_found += found;
    let state = guard.state.clone();
    let _ = writeln!(
        guard.log,
        "campaign finished: cov {} crashes {}",
        state.coverage_counter, state.crashes_found
    );
    Ok(state)
}

fn spawn_job(
    config: &CampaignConfig,
    layout: &ArtifactLayout,
    index: u32,
    shared: &Arc<Mutex<Shared>>,
) -> Result<Job, OrchestratorError> {
    let artifacts = layout.job_artifacts(index);
    fs::create_dir_all(&artifacts).map_err(|e| io_err("creating artifact dir", e))?;
    let argv = expand_fuzz_command(&config.fuzz_command, &layout.corpus(), &artifacts);
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|source| OrchestratorError::SpawnFailure {
            program: argv[0].clone(),
            source,
        })?;
    let readers = vec![
        consume(child.stdout.take(), index, Arc::clone(shared)),
        consume(child.stderr.take(), index, Arc::clone(shared)),
    ];
    Ok(Job {
        index,
        child,
        exited: false,
        readers,
    })
}

fn consume<R: Read + Send + 'static>(
    pipe: Option<R>,
    job: u32,
    shared: Arc<Mutex<Shared>>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        let Some(pipe) = pipe else { return };
        let mut reader = BufReader::new(pipe);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {}
            }
            let line = String::from_utf8_lossy(&buf);
            let line = line.trim_end_matches(['\n', '\r']);
            let mut guard = shared.lock().expect("campaign state");
            let _ = writeln!(guard.log, "[job {job}] {line}");
            if let Some(cov) = parse_fuzzer_stats(line) {
                guard.state.observe_coverage(cov, now_utc());
            }
        }
    })
}

fn sleep_unless_interrupted(total: Duration, interrupt: Option<&AtomicBool>) {
    let step = Duration::from_millis(50);
    let deadline = Instant::now() + total;
    while Instant::now() < deadline {
        if interrupt.is_some_and(|f| f.load(Ordering::SeqCst)) {
            return;
        }
        thread::sleep(step.min(deadline.saturating_duration_since(Instant::now())));
    }
}

/// Interrupts every job's process group, waits up to `grace`, then kills
/// whatever is left.
fn terminate(jobs: &mut [Job], grace: Duration) {
    for job in jobs.iter_mut() {
        if !job.exited {
            kill_group(job.child.id(), libc::SIGINT);
        }
    }
    let deadline = Instant::now() + grace;
    loop {
        let mut running = false;
        for job in jobs.iter_mut() {
            if !job.exited {
                job.exited = matches!(job.child.try_wait(), Ok(Some(_)));
                running |= !job.exited;
            }
        }
        if !running || Instant::now() >= deadline {
            break;
        }
        thread::sleep(Duration::from_millis(20));
    }
    for job in jobs.iter_mut() {
        kill_group(job.child.id(), libc::SIGKILL);
        if !job.exited {
            let _ = job.child.wait();
            job.exited = true;
        }
        log::debug!("job {} terminated", job.index);
    }
}

/// Moves `crash-*` files from the per-job artifact directories into
/// `crashes/`, each exactly once.
struct CrashSweeper {
    layout: ArtifactLayout,
    jobs: u32,
    settle: Duration,
    seen: HashSet<PathBuf>,
    pending: HashMap<PathBuf, (u64, Option<SystemTime>)>,
}

impl CrashSweeper {
    fn new(layout: ArtifactLayout, jobs: u32, settle: Duration) -> Self {
        CrashSweeper {
            layout,
            jobs,
            settle,
            seen: HashSet::new(),
            pending: HashMap::new(),
        }
    }

    /// A file is taken once its size and mtime held still across two
    /// sweeps, once it is older than the settle time, or unconditionally
    /// when `force` is set.
    fn sweep(&mut self, force: bool) -> Result<u64, OrchestratorError> {
        let mut collected = 0;
        for job in 0..self.jobs {
            let dir = self.layout.job_artifacts(job);
            let Ok(entries) = fs::read_dir(&dir) else {
                continue;
            };
            let mut names: Vec<PathBuf> = entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| {
                    p.is_file()
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("crash-"))
                })
                .collect();
            names.sort();
            for path in names {
                if self.seen.contains(&path) {
                    continue;
                }
                let Ok(meta) = fs::metadata(&path) else {
                    continue;
                };
                let stamp = (meta.len(), meta.modified().ok());
                let settled = meta
                    .modified()
                    .ok()
                    .and_then(|m| m.elapsed().ok())
                    .is_some_and(|age| age >= self.settle);
                if force || settled || self.pending.get(&path) == Some(&stamp) {
                    self.pending.remove(&path);
                    self.seen.insert(path.clone());
                    if self.collect(&path, job)? {
                        collected += 1;
                    }
                } else {
                    self.pending.insert(path, stamp);
                }
            }
        }
        Ok(collected)
    }

    fn collect(&self, path: &Path, job: u32) -> Result<bool, OrchestratorError> {
        let bytes = fs::read(path).map_err(|e| io_err("reading crash artifact", e))?;
        let name = path
            .file_name()
            .expect("artifact name")
            .to_string_lossy()
            .into_owned();
        let mut dest = self.layout.crashes().join(&name);
        if dest.exists() {
            if fs::read(&dest).map_err(|e| io_err("reading crash", e))? == bytes {
                return Ok(false);
            }
            dest = self.layout.crashes().join(format!("{name}-job{job}"));
            if dest.exists() {
                return Ok(false);
            }
        }
        write_atomic(&dest, &bytes).map_err(|e| io_err("storing crash", e))?;
        Ok(true)
    }
}

fn write_atomic(dest: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = dest.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dest)
}
