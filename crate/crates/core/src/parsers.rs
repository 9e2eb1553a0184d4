//! Raw crash text to [`StackTrace`] + [`CrashKind`].
//!
//! Two dialects are understood: interpreter tracebacks as printed by
//! CPython, and the banner + numbered backtrace shape shared by the
//! sanitizer runtimes. The grammar is line oriented and anchored; lines that
//! match nothing are skipped, so fuzzer log noise between frames is
//! tolerated.

use std::borrow::Cow;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::model::{AddressClass, CrashKind, MemoryAccess, SourceLine, StackFrame, StackTrace};

pub const PYTHON_BANNER: &str = "Traceback (most recent call last):";
pub const DEFAULT_SNIPPET_RADIUS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("report format not recognized")]
    UnknownFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Python,
    Sanitizer,
    Unknown,
}

fn sanitizer_banner() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"ERROR: (?P<name>[A-Za-z]+)Sanitizer: ?(?P<rest>.*)$").expect("banner regex")
    })
}

fn python_frame() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\s*File "(?P<file>[^"]*)", line (?P<line>\d+), in (?P<func>.*?)\s*$"#)
            .expect("python frame regex")
    })
}

fn python_exception() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?P<ty>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)(?::(?: ?(?P<msg>.*)))?$",
        )
        .expect("python exception regex")
    })
}

fn numbered_frame() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*#(?P<idx>\d+)\s+0x[0-9a-fA-F]+\s*(?P<rest>.*?)\s*$").expect("frame regex")
    })
}

/// Replaces invalid UTF-8 with U+FFFD.
pub fn decode_report(bytes: &[u8]) -> Cow<'_, str> {
    String::from_utf8_lossy(bytes)
}

/// Classifies a report by its banner. A sanitizer banner wins over a
/// traceback banner: a native crash surfacing through an interpreter harness
/// prints both.
pub fn detect_report_kind(text: &str) -> ReportKind {
    let mut python = false;
    for line in text.lines() {
        if sanitizer_banner().is_match(line) {
            return ReportKind::Sanitizer;
        }
        if line.trim() == PYTHON_BANNER {
            python = true;
        }
    }
    if python {
        ReportKind::Python
    } else {
        ReportKind::Unknown
    }
}

/// Dispatches to the parser matching [`detect_report_kind`].
pub fn parse_report(text: &str) -> Result<(StackTrace, CrashKind), ParseError> {
    match detect_report_kind(text) {
        ReportKind::Sanitizer => parse_sanitizer_report(text),
        ReportKind::Python => parse_python_traceback(text),
        ReportKind::Unknown => Err(ParseError::UnknownFormat),
    }
}

/// Parses the last traceback block in `text`. Earlier blocks of a chained
/// traceback are ignored. Frames are returned innermost first.
pub fn parse_python_traceback(text: &str) -> Result<(StackTrace, CrashKind), ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| l.trim() == PYTHON_BANNER)
        .ok_or_else(|| ParseError::MalformedReport("no traceback banner".into()))?;

    let mut frames = Vec::new();
    let mut last_frame_at = None;
    for (i, line) in lines.iter().enumerate().skip(start + 1) {
        if let Some(caps) = python_frame().captures(line) {
            let line_no = caps["line"].parse::<u32>().ok();
            frames.push(StackFrame::new(&caps["file"], &caps["func"], line_no));
            last_frame_at = Some(i);
        }
    }
    let Some(last_frame_at) = last_frame_at else {
        return Err(ParseError::MalformedReport(
            "traceback banner without any parsable frame".into(),
        ));
    };

    let kind = lines[last_frame_at + 1..]
        .iter()
        .filter(|l| !l.trim().is_empty() && !l.starts_with(char::is_whitespace))
        .find_map(|l| python_exception().captures(l.trim_end()))
        .map(|caps| CrashKind::PythonException {
            exc_type: caps["ty"].to_string(),
            message: caps.name("msg").map_or("", |m| m.as_str()).to_string(),
        })
        .unwrap_or_else(|| CrashKind::PythonException {
            exc_type: "<unknown>".to_string(),
            message: String::new(),
        });

    frames.reverse();
    Ok((StackTrace::new(frames), kind))
}

/// Parses the first sanitizer error in `text` and its first numbered
/// backtrace block.
pub fn parse_sanitizer_report(text: &str) -> Result<(StackTrace, CrashKind), ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (banner_at, caps) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| sanitizer_banner().captures(l).map(|c| (i, c)))
        .ok_or_else(|| ParseError::MalformedReport("no sanitizer banner".into()))?;

    let category = sanitizer_category(&caps["name"], &caps["rest"]);
    let mut address = parse_fault_address(&caps["rest"]);
    let mut access = None;

    let mut frames = Vec::new();
    let mut expected = 0usize;
    for line in &lines[banner_at + 1..] {
        if access.is_none() {
            access = parse_access(line);
        }
        if address.is_none() && frames.is_empty() {
            address = parse_fault_address(line);
        }
        match numbered_frame().captures(line) {
            Some(c) => {
                let idx: usize = match c["idx"].parse() {
                    Ok(v) => v,
                    Err(_) => break,
                };
                if idx != expected {
                    if frames.is_empty() {
                        continue;
                    }
                    break;
                }
                frames.push(parse_native_frame(&c["rest"]));
                expected += 1;
            }
            None if !frames.is_empty() && line.trim().is_empty() => break,
            None => {}
        }
    }

    if frames.is_empty() {
        return Err(ParseError::MalformedReport(
            "sanitizer banner without a #0 frame".into(),
        ));
    }
    let kind = CrashKind::SanitizerError {
        category,
        access,
        address_class: address.map(AddressClass::classify),
    };
    Ok((StackTrace::new(frames), kind))
}

fn sanitizer_category(name: &str, rest: &str) -> String {
    let rest = rest.trim();
    if name == "Leak" {
        return "leak".to_string();
    }
    if let Some(tail) = rest.strip_prefix("attempting ") {
        if tail.starts_with("double-free") {
            return "double-free".to_string();
        }
        if tail.starts_with("free on address which was not malloc") {
            return "bad-free".to_string();
        }
    }
    if rest.starts_with("requested allocation size") {
        return "allocation-size-too-big".to_string();
    }
    if rest.starts_with("out of memory") || rest.starts_with("out-of-memory") {
        return "out-of-memory".to_string();
    }
    match rest.split_whitespace().next() {
        Some(tok) => tok.trim_end_matches(':').to_string(),
        None => format!("{name}Sanitizer-error"),
    }
}

fn parse_fault_address(line: &str) -> Option<u64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?:on|unknown) address (?:0x)?(?P<addr>[0-9a-fA-F]+)").expect("address regex")
    });
    re.captures(line)
        .and_then(|c| u64::from_str_radix(&c["addr"], 16).ok())
}

fn parse_access(line: &str) -> Option<MemoryAccess> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\s*(?P<a>READ|WRITE) of size \d+|caused by a (?P<b>READ|WRITE|UNKNOWN) memory access")
            .expect("access regex")
    });
    let caps = re.captures(line)?;
    let word = caps.name("a").or_else(|| caps.name("b"))?.as_str();
    Some(match word {
        "READ" => MemoryAccess::Read,
        "WRITE" => MemoryAccess::Write,
        _ => MemoryAccess::Unknown,
    })
}

/// Parses the part of a numbered frame line after the program counter.
fn parse_native_frame(rest: &str) -> StackFrame {
    static BUILD_ID: OnceLock<Regex> = OnceLock::new();
    static WITH_LINE: OnceLock<Regex> = OnceLock::new();
    static NO_LINE: OnceLock<Regex> = OnceLock::new();
    static MODULE: OnceLock<Regex> = OnceLock::new();
    let build_id = BUILD_ID.get_or_init(|| Regex::new(r"\s*\(BuildId: [^)]*\)$").unwrap());
    let with_line = WITH_LINE.get_or_init(|| {
        Regex::new(r"^(?P<f>.+?)\s+(?P<file>\S+?):(?P<line>\d+)(?::\d+)?$").unwrap()
    });
    let no_line = NO_LINE.get_or_init(|| Regex::new(r"^(?P<f>.+?)\s+(?P<file>\S+?):\?$").unwrap());
    let module = MODULE
        .get_or_init(|| Regex::new(r"^(?P<f>.*?)\s*\((?P<m>[^()]+?)\+0x[0-9a-fA-F]+\)$").unwrap());

    let rest = build_id.replace(rest, "");
    let rest = rest.trim();
    let Some(symbolic) = rest.strip_prefix("in ") else {
        let file = module
            .captures(rest)
            .map(|c| c["m"].to_string())
            .unwrap_or_default();
        return StackFrame::new(file, rest, None);
    };
    let symbolic = symbolic.trim();

    if let Some(c) = with_line.captures(symbolic) {
        return StackFrame::new(&c["file"], &c["f"], c["line"].parse().ok());
    }
    if let Some(c) = no_line.captures(symbolic) {
        let file = if &c["file"] == "??" { "" } else { &c["file"] };
        return StackFrame::new(file, &c["f"], None);
    }
    if let Some(c) = module.captures(symbolic) {
        if !c["f"].is_empty() {
            return StackFrame::new(&c["m"], &c["f"], None);
        }
    }
    StackFrame::new("", symbolic, None)
}

/// Lines `[line - radius, line + radius]` of `file`, clamped to the file,
/// each paired with its 1-based number. `None` when the file cannot be read
/// or `line` lies outside it.
pub fn extract_source_snippet(file: &Path, line: u32, radius: u32) -> Option<Vec<SourceLine>> {
    let bytes = fs::read(file).ok()?;
    let text = String::from_utf8_lossy(&bytes);
    let lines: Vec<&str> = text.lines().collect();
    if line == 0 || line as usize > lines.len() {
        return None;
    }
    let first = line.saturating_sub(radius).max(1);
    let last = line.saturating_add(radius).min(lines.len() as u32);
    Some(
        (first..=last)
            .map(|n| SourceLine {
                number: n,
                text: lines[(n - 1) as usize].to_string(),
            })
            .collect(),
    )
}
