use regex::RegexSet;
use serde::{Deserialize, Serialize};

use super::TriageError;
use crate::model::{CrashLine, Origin, StackFrame, StackTrace};

pub const DEFAULT_STDLIB_PATTERNS: &[&str] = &[r"/lib/python\d", r"<frozen .*>"];
pub const DEFAULT_FUZZER_PATTERNS: &[&str] =
    &[r"^atheris", r"^TestOneInput$", r"^fuzzer", r"LLVMFuzzer"];
pub const DEFAULT_SANITIZER_PATTERNS: &[&str] =
    &[r"^__asan", r"^__sanitizer", r"^__ubsan", r"^__interceptor"];
pub const DEFAULT_EXCEPTION_UTILITY_PATTERNS: &[&str] = &[r"^_handle_exception$", r"^reraise$"];

/// A list of regular expressions compiled into one set.
#[derive(Clone, Debug)]
pub struct PatternSet {
    patterns: Vec<String>,
    set: RegexSet,
}

impl PatternSet {
    pub fn new<I, S>(patterns: I) -> Result<Self, TriageError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let patterns: Vec<String> = patterns.into_iter().map(Into::into).collect();
        let set = RegexSet::new(&patterns).map_err(|e| {
            // RegexSet does not say which pattern failed; find it for the message.
            let culprit = patterns
                .iter()
                .find(|p| regex::Regex::new(p).is_err())
                .cloned()
                .unwrap_or_default();
            TriageError::InvalidPattern {
                pattern: culprit,
                message: e.to_string(),
            }
        })?;
        Ok(PatternSet { patterns, set })
    }

    pub fn empty() -> Self {
        PatternSet {
            patterns: Vec::new(),
            set: RegexSet::empty(),
        }
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.set.is_match(text)
    }
}

impl PartialEq for PatternSet {
    fn eq(&self, other: &Self) -> bool {
        self.patterns == other.patterns
    }
}

impl Serialize for PatternSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.patterns.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PatternSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let patterns = Vec::<String>::deserialize(deserializer)?;
        PatternSet::new(patterns).map_err(serde::de::Error::custom)
    }
}

/// Frame filter. Standard-library patterns match the frame's file path;
/// the other three lists match the function name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    pub stdlib: PatternSet,
    pub fuzzer: PatternSet,
    pub sanitizer: PatternSet,
    pub exception_utils: PatternSet,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            stdlib: PatternSet::new(DEFAULT_STDLIB_PATTERNS.iter().copied())
                .expect("default pattern"),
            fuzzer: PatternSet::new(DEFAULT_FUZZER_PATTERNS.iter().copied())
                .expect("default pattern"),
            sanitizer: PatternSet::new(DEFAULT_SANITIZER_PATTERNS.iter().copied())
                .expect("default pattern"),
            exception_utils: PatternSet::new(DEFAULT_EXCEPTION_UTILITY_PATTERNS.iter().copied())
                .expect("default pattern"),
        }
    }
}

impl FilterRules {
    /// Rules that filter nothing.
    pub fn empty() -> Self {
        FilterRules {
            stdlib: PatternSet::empty(),
            fuzzer: PatternSet::empty(),
            sanitizer: PatternSet::empty(),
            exception_utils: PatternSet::empty(),
        }
    }

    /// Origin of a frame under these rules; [`Origin::UserCode`] when no
    /// rule matches.
    pub fn classify(&self, frame: &StackFrame) -> Origin {
        if self.stdlib.is_match(&frame.file) {
            Origin::StandardLibrary
        } else if self.fuzzer.is_match(&frame.function) {
            Origin::FuzzerRuntime
        } else if self.sanitizer.is_match(&frame.function) {
            Origin::SanitizerRuntime
        } else if self.exception_utils.is_match(&frame.function) {
            Origin::ExceptionUtility
        } else {
            Origin::UserCode
        }
    }

    /// Copy of `trace` with every frame's origin assigned.
    pub fn annotate(&self, trace: &StackTrace) -> StackTrace {
        trace
            .iter()
            .map(|f| StackFrame {
                origin: self.classify(f),
                ..f.clone()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilteredTrace {
    /// Frames that matched no rule, in their original order.
    pub trace: StackTrace,
    /// Frames that were dropped, each tagged with the category that matched.
    pub removed: Vec<StackFrame>,
    /// Set when every frame matched a rule; `trace` is then the unchanged
    /// input.
    pub all_filtered: bool,
}

/// Drops frames matching any rule. A non-empty trace never filters down to
/// nothing: if all frames match, the input is returned as is and flagged.
pub fn filter_trace(trace: &StackTrace, rules: &FilterRules) -> FilteredTrace {
    let mut kept = Vec::with_capacity(trace.len());
    let mut removed = Vec::new();
    for frame in trace.iter() {
        match rules.classify(frame) {
            Origin::UserCode => kept.push(frame.clone()),
            origin => removed.push(StackFrame {
                origin,
                ..frame.clone()
            }),
        }
    }
    if kept.is_empty() && !trace.is_empty() {
        return FilteredTrace {
            trace: trace.clone(),
            removed,
            all_filtered: true,
        };
    }
    FilteredTrace {
        trace: StackTrace::new(kept),
        removed,
        all_filtered: false,
    }
}

/// Location of the topmost frame that matches no rule and has a line number.
pub fn extract_crashline(trace: &StackTrace, rules: &FilterRules) -> Option<CrashLine> {
    trace
        .iter()
        .filter(|f| rules.classify(f) == Origin::UserCode)
        .find_map(|f| {
            f.line.map(|line| CrashLine {
                file: f.file.clone(),
                line,
            })
        })
}
