//! Domain types shared by every pipeline stage.
//!
//! Nothing in here performs I/O. Reports are serialized to JSON by the
//! artifact writer in [`crate::orchestrator`].

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where a stack frame comes from, as decided by the frame filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    UserCode,
    StandardLibrary,
    FuzzerRuntime,
    SanitizerRuntime,
    ExceptionUtility,
    #[default]
    Unknown,
}

impl Origin {
    /// True for origins that the frame filter removes.
    pub fn is_filtered(self) -> bool {
        !matches!(self, Origin::UserCode | Origin::Unknown)
    }
}

/// One frame of a stack trace.
///
/// `file` is empty for stripped native frames that carry no location.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StackFrame {
    pub file: String,
    pub function: String,
    pub line: Option<u32>,
    #[serde(default)]
    pub origin: Origin,
}

impl StackFrame {
    /// Builds a frame with [`Origin::Unknown`]. An empty function name is
    /// replaced by `??` and a zero line number is dropped.
    pub fn new(file: impl Into<String>, function: impl Into<String>, line: Option<u32>) -> Self {
        let mut function = function.into();
        if function.trim().is_empty() {
            function = "??".to_string();
        }
        StackFrame {
            file: file.into(),
            function,
            line: line.filter(|&l| l >= 1),
            origin: Origin::Unknown,
        }
    }

    /// Key used for exact-duplicate detection: file, function and line.
    pub fn dedup_key(&self) -> (&str, &str, Option<u32>) {
        (&self.file, &self.function, self.line)
    }

    /// Key used for similarity matching: line numbers are ignored.
    pub fn match_key(&self) -> (&str, &str) {
        (&self.file, &self.function)
    }
}

impl fmt::Display for StackFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.function)?;
        if !self.file.is_empty() {
            write!(f, " at {}", self.file)?;
            if let Some(line) = self.line {
                write!(f, ":{line}")?;
            }
        }
        Ok(())
    }
}

/// Ordered frames, index 0 is the innermost (topmost) call.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StackTrace {
    pub frames: Vec<StackFrame>,
}

impl StackTrace {
    pub fn new(frames: Vec<StackFrame>) -> Self {
        StackTrace { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StackFrame> {
        self.frames.iter()
    }

    /// Frames whose origin was not marked as filtered. Falls back to the
    /// whole trace when every frame is filtered, so a non-empty trace never
    /// becomes empty.
    pub fn significant(&self) -> StackTrace {
        let kept: Vec<StackFrame> = self
            .frames
            .iter()
            .filter(|f| !f.origin.is_filtered())
            .cloned()
            .collect();
        if kept.is_empty() {
            self.clone()
        } else {
            StackTrace::new(kept)
        }
    }
}

impl FromIterator<StackFrame> for StackTrace {
    fn from_iter<I: IntoIterator<Item = StackFrame>>(iter: I) -> Self {
        StackTrace::new(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemoryAccess {
    Read,
    Write,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AddressClass {
    Null,
    NearNull,
    Other,
}

impl AddressClass {
    pub fn classify(address: u64) -> Self {
        match address {
            0 => AddressClass::Null,
            a if a < 0x1000 => AddressClass::NearNull,
            _ => AddressClass::Other,
        }
    }
}

/// Error information carried by a crash report.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrashKind {
    PythonException {
        exc_type: String,
        message: String,
    },
    SanitizerError {
        category: String,
        access: Option<MemoryAccess>,
        address_class: Option<AddressClass>,
    },
}

impl fmt::Display for CrashKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashKind::PythonException { exc_type, message } if message.is_empty() => {
                write!(f, "{exc_type}")
            }
            CrashKind::PythonException { exc_type, message } => write!(f, "{exc_type}: {message}"),
            CrashKind::SanitizerError {
                category, access, ..
            } => {
                write!(f, "{category}")?;
                match access {
                    Some(MemoryAccess::Read) => write!(f, " (READ)"),
                    Some(MemoryAccess::Write) => write!(f, " (WRITE)"),
                    _ => Ok(()),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeverityClass {
    Exploitable,
    ProbablyExploitable,
    NotExploitable,
}

impl fmt::Display for SeverityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeverityClass::Exploitable => "EXPLOITABLE",
            SeverityClass::ProbablyExploitable => "PROBABLY_EXPLOITABLE",
            SeverityClass::NotExploitable => "NOT_EXPLOITABLE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Severity {
    pub class: SeverityClass,
    pub short_description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrashLine {
    pub file: String,
    pub line: u32,
}

impl fmt::Display for CrashLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    pub number: u32,
    pub text: String,
}

/// Stable report identifier: lowercase hex SHA-256 of the raw report bytes.
pub fn report_id(raw_report: &str) -> String {
    let digest = Sha256::digest(raw_report.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Current time truncated to whole seconds.
pub fn now_utc() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(0)
}

/// A structured record of one crash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub id: String,
    pub seed_path: PathBuf,
    pub raw_report: String,
    pub kind: CrashKind,
    pub severity: Severity,
    pub trace: StackTrace,
    pub crashline: Option<CrashLine>,
    pub source_snippet: Option<Vec<SourceLine>>,
    pub target_name: String,
    pub created_at: DateTime<Utc>,
}

impl CrashReport {
    /// `<severity>: <kind> at <crashline>`, the per-crash line used in
    /// cluster summaries.
    pub fn describe(&self) -> String {
        let location = match &self.crashline {
            Some(cl) => cl.to_string(),
            None => "<unknown>".to_string(),
        };
        format!("{}: {} at {}", self.severity.class, self.kind, location)
    }
}

/// A group of deduplicated reports. `representative` is always a member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub members: Vec<String>,
    pub representative: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDigest {
    pub id: u32,
    /// Crashes in the cluster, duplicates included.
    pub crash_count: usize,
    /// One line per deduplicated member.
    pub descriptions: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageTotals {
    pub raw: usize,
    pub deduplicated: usize,
    pub clusters: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageSummary {
    pub clusters: Vec<ClusterDigest>,
    pub totals: TriageTotals,
}

impl fmt::Display for TriageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for digest in &self.clusters {
            writeln!(f, "==> <cl{}>: {} crash(es)", digest.id, digest.crash_count)?;
            for line in &digest.descriptions {
                writeln!(f, "  {line}")?;
            }
        }
        writeln!(
            f,
            "SUMMARY: {} crashes -> {} deduplicated -> {} clusters",
            self.totals.raw, self.totals.deduplicated, self.totals.clusters
        )
    }
}
