use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Paths of the artifacts written under a campaign's output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArtifactLayout {
    root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn crashes(&self) -> PathBuf {
        self.root.join("crashes")
    }

    pub fn job_artifacts(&self, job: u32) -> PathBuf {
        self.root.join("artifacts").join(format!("job-{job}"))
    }

    pub fn casr(&self) -> PathBuf {
        self.root.join("casr")
    }

    pub fn reports(&self) -> PathBuf {
        self.casr().join("reports")
    }

    pub fn unparsed(&self) -> PathBuf {
        self.casr().join("unparsed")
    }

    pub fn summary(&self) -> PathBuf {
        self.casr().join("summary.txt")
    }

    pub fn cluster_dir(&self, id: u32) -> PathBuf {
        self.casr().join("clusters").join(format!("cl{id}"))
    }

    pub fn lcov(&self) -> PathBuf {
        self.root.join("coverage.lcov")
    }

    pub fn coverage_json(&self) -> PathBuf {
        self.root.join("coverage.json")
    }

    pub fn log(&self, stage: &str) -> PathBuf {
        self.root.join("logs").join(format!("{stage}.log"))
    }

    pub fn pipeline_report(&self) -> PathBuf {
        self.root.join("pipeline-report.json")
    }

    pub fn scratch(&self) -> PathBuf {
        self.root.join("tmp")
    }

    fn lock_file(&self) -> PathBuf {
        self.root.join(".fuzzpipe.lock")
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Fails with `AlreadyExists` when a live process holds the lock. A lock
    /// left by a dead process is taken over.
    pub fn acquire(layout: &ArtifactLayout) -> io::Result<OutputLock> {
        fs::create_dir_all(layout.root())?;
        let path = layout.lock_file();
        for _ in 0..2 {
            match fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&path)
            {
                Ok(mut file) => {
                    writeln!(file, "{}", std::process::id())?;
                    return Ok(OutputLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<i32>().ok());
                    if holder.is_some_and(process_alive) {
                        return Err(io::Error::new(
                            io::ErrorKind::AlreadyExists,
                            format!(
                                "{} is held by pid {}",
                                path.display(),
                                holder.unwrap_or_default()
                            ),
                        ));
                    }
                    fs::remove_file(&path)?;
                }
                Err(e) => return Err(e),
            }
        }
        Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            format!("could not claim {}", path.display()),
        ))
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn process_alive(pid: i32) -> bool {
    // SAFETY: signal 0 only checks for existence.
    unsafe { libc::kill(pid, 0) == 0 }
}
