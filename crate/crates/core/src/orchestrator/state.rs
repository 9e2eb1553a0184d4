use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    NoNewCoverage,
    MaxTotalTime,
    CrashBudget,
    ExternalSignal,
    FuzzerExit,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::NoNewCoverage => "no new coverage",
            StopReason::MaxTotalTime => "max total time",
            StopReason::CrashBudget => "crash budget",
            StopReason::ExternalSignal => "external signal",
            StopReason::FuzzerExit => "fuzzer exited",
        })
    }
}

/// Live counters of a campaign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignState {
    pub started_at: DateTime<Utc>,
    pub last_new_coverage_at: DateTime<Utc>,
    pub coverage_counter: u64,
    pub crashes_found: u64,
    pub stop_reason: Option<StopReason>,
}

impl CampaignState {
    pub fn new(started_at: DateTime<Utc>) -> Self {
        CampaignState {
            started_at,
            last_new_coverage_at: started_at,
            coverage_counter: 0,
            crashes_found: 0,
            stop_reason: None,
        }
    }

    /// Records a coverage reading. Only a new maximum counts as growth.
    pub fn observe_coverage(&mut self, counter: u64, now: DateTime<Utc>) -> bool {
        if counter <= self.coverage_counter {
            return false;
        }
        self.coverage_counter = counter;
        self.last_new_coverage_at = now.max(self.started_at);
        true
    }

    /// Sets the stop reason unless one is already recorded.
    pub fn stop(&mut self, reason: StopReason) -> bool {
        if self.stop_reason.is_some() {
            return false;
        }
        self.stop_reason = Some(reason);
        true
    }
}

/// Coverage counter from a coverage-guided fuzzer status line
/// (`#<n> <EVENT> cov: <c> ...`).
pub fn parse_fuzzer_stats(line: &str) -> Option<u64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*#\d+\s.*?\bcov: (\d+)").expect("stats regex"));
    re.captures(line)?[1].parse().ok()
}

/// The stop condition that holds at `now`, if any. When several hold,
/// total time wins over the crash budget, which wins over stalled coverage.
pub fn evaluate_stop(
    state: &CampaignState,
    config: &CampaignConfig,
    now: DateTime<Utc>,
) -> Option<StopReason> {
    let age = (now - state.started_at).num_seconds();
    let stalled = (now - state.last_new_coverage_at).num_seconds();
    if age >= 0 && age as u64 >= config.max_total_time_sec {
        return Some(StopReason::MaxTotalTime);
    }
    if let Some(budget) = config.crash_budget {
        if state.crashes_found >= budget {
            return Some(StopReason::CrashBudget);
        }
    }
    if stalled >= 0 && stalled as u64 >= config.exit_on_time_sec {
        return Some(StopReason::NoNewCoverage);
    }
    None
}
