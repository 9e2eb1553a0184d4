//! Single-input execution of the target (`run_command`).
//!
//! The input path is appended as the last argument. A crash is a nonzero
//! exit, a signal, or a timeout. In coverage mode the child sees
//! `PIPELINE_COVERAGE=1` and writes `COV <file>:<line>` lines to
//! `<input>.cov`; the input is copied to a scratch directory first so the
//! sidecar never lands in a corpus.

use std::fs;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::coverage::CoverageMap;

pub const COVERAGE_ENV: &str = "PIPELINE_COVERAGE";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("cannot spawn `{program}`: {source}")]
    Unavailable { program: String, source: io::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Replay,
    Coverage,
}

#[derive(Clone, Debug, Default)]
pub struct Execution {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Present in coverage mode when the child wrote a sidecar.
    pub coverage: Option<CoverageMap>,
}

impl Execution {
    pub fn crashed(&self) -> bool {
        self.timed_out || self.exit_code != Some(0)
    }
}

pub trait TargetExecutor: Sync {
    fn execute(&self, input: &Path, mode: ExecMode) -> Result<Execution, ExecError>;
}

/// Runs an external command once per input.
#[derive(Clone, Debug)]
pub struct CommandExecutor {
    argv: Vec<String>,
    timeout: Duration,
    scratch: PathBuf,
}

static SCRATCH_SEQ: AtomicU64 = AtomicU64::new(0);

impl CommandExecutor {
    /// `scratch` holds per-execution copies of inputs in coverage mode.
    pub fn new(argv: Vec<String>, timeout: Duration, scratch: impl Into<PathBuf>) -> Self {
        assert!(!argv.is_empty(), "run command must not be empty");
        CommandExecutor {
            argv,
            timeout,
            scratch: scratch.into(),
        }
    }

    fn spawn(&self, input: &Path, coverage: bool) -> Result<Child, ExecError> {
        let mut cmd = Command::new(&self.argv[0]);
        cmd.args(&self.argv[1..])
            .arg(input)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if coverage {
            cmd.env(COVERAGE_ENV, "1");
        } else {
            cmd.env_remove(COVERAGE_ENV);
        }
        cmd.spawn().map_err(|source| match source.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => ExecError::Unavailable {
                program: self.argv[0].clone(),
                source,
            },
            _ => ExecError::Io {
                context: format!("spawning {}", self.argv[0]),
                source,
            },
        })
    }

    fn run(&self, input: &Path, coverage: bool) -> Result<Execution, ExecError> {
        let mut child = self.spawn(input, coverage)?;
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());

        let deadline = Instant::now() + self.timeout;
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    timed_out = true;
                    kill_group(child.id(), libc::SIGKILL);
                    break child
                        .wait()
                        .map_err(|source| io_err("waiting for target", source))?;
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(source) => return Err(io_err("waiting for target", source)),
            }
        };
        // Stray grandchildren would otherwise keep the pipes open.
        kill_group(child.id(), libc::SIGKILL);

        Ok(Execution {
            exit_code: status.code(),
            signal: status.signal(),
            timed_out,
            stdout: stdout.join().unwrap_or_default(),
            stderr: stderr.join().unwrap_or_default(),
            coverage: None,
        })
    }
}

impl TargetExecutor for CommandExecutor {
    fn execute(&self, input: &Path, mode: ExecMode) -> Result<Execution, ExecError> {
        match mode {
            ExecMode::Replay => self.run(input, false),
            ExecMode::Coverage => {
                let seq = SCRATCH_SEQ.fetch_add(1, Ordering::Relaxed);
                let dir = self
                    .scratch
                    .join(format!("exec-{}-{seq}", std::process::id()));
                fs::create_dir_all(&dir).map_err(|e| io_err("creating scratch dir", e))?;
                let name = input.file_name().unwrap_or_else(|| "input".as_ref());
                let copy = dir.join(name);
                let result = fs::copy(input, &copy)
                    .map_err(|e| io_err(&format!("copying {}", input.display()), e))
                    .and_then(|_| self.run(&copy, true))
                    .map(|mut exec| {
                        let mut sidecar = copy.into_os_string();
                        sidecar.push(".cov");
                        exec.coverage = fs::read(&sidecar).ok().map(|bytes| {
                            CoverageMap::from_cov_lines(&String::from_utf8_lossy(&bytes))
                        });
                        exec
                    });
                let _ = fs::remove_dir_all(&dir);
                result
            }
        }
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut pipe) = pipe {
            let _ = pipe.read_to_end(&mut buf);
        }
        buf
    })
}

fn io_err(context: &str, source: io::Error) -> ExecError {
    ExecError::Io {
        context: context.to_string(),
        source,
    }
}

/// Sends `signal` to the process group led by `pid`.
pub(crate) fn kill_group(pid: u32, signal: libc::c_int) {
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe {
        libc::kill(-(pid as libc::pid_t), signal);
    }
}
