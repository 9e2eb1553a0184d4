use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::filter::{filter_trace, FilterRules};
use crate::model::CrashReport;

/// A report folded into a representative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub id: String,
    pub seed_path: PathBuf,
    pub representative: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DedupOutcome {
    /// One report per distinct filtered trace, sorted by id.
    pub representatives: Vec<CrashReport>,
    /// Every other report, sorted by id then seed path.
    pub duplicates: Vec<Duplicate>,
}

impl DedupOutcome {
    pub fn total(&self) -> usize {
        self.representatives.len() + self.duplicates.len()
    }
}

type FrameKey = (String, String, Option<u32>);

/// Groups reports whose filtered traces are frame-for-frame equal on
/// (file, function, line). The representative of a group is the report with
/// the smallest id (seed path breaks ties between byte-identical reports).
///
/// Duplicates are a list rather than an id map: two crash inputs can
/// produce byte-identical reports, and both must be counted.
pub fn dedup(reports: &[CrashReport], rules: &FilterRules) -> DedupOutcome {
    let mut groups: BTreeMap<Vec<FrameKey>, Vec<&CrashReport>> = BTreeMap::new();
    for report in reports {
        let filtered = filter_trace(&report.trace, rules);
        let key = filtered
            .trace
            .iter()
            .map(|f| {
                let (file, func, line) = f.dedup_key();
                (file.to_string(), func.to_string(), line)
            })
            .collect();
        groups.entry(key).or_default().push(report);
    }

    let mut out = DedupOutcome::default();
    for mut group in groups.into_values() {
        group.sort_by(|a, b| (&a.id, &a.seed_path).cmp(&(&b.id, &b.seed_path)));
        let rep = group[0];
        out.duplicates.extend(group[1..].iter().map(|r| Duplicate {
            id: r.id.clone(),
            seed_path: r.seed_path.clone(),
            representative: rep.id.clone(),
        }));
        out.representatives.push(rep.clone());
    }
    out.representatives
        .sort_by(|a, b| (&a.id, &a.seed_path).cmp(&(&b.id, &b.seed_path)));
    out.duplicates
        .sort_by(|a, b| (&a.id, &a.seed_path).cmp(&(&b.id, &b.seed_path)));
    out
}
