use std::collections::{BTreeMap, HashMap};

use super::dedup::Duplicate;
use super::TriageError;
use crate::model::{Cluster, ClusterDigest, CrashReport, TriageSummary, TriageTotals};

/// Builds the per-cluster digest. A cluster's crash count includes the
/// duplicates folded into its members.
pub fn summarize(
    clusters: &[Cluster],
    reports: &BTreeMap<String, CrashReport>,
    duplicates: &[Duplicate],
) -> Result<TriageSummary, TriageError> {
    let mut folded: HashMap<&str, usize> = HashMap::new();
    for dup in duplicates {
        *folded.entry(dup.representative.as_str()).or_default() += 1;
    }

    let mut ordered: Vec<&Cluster> = clusters.iter().collect();
    ordered.sort_by_key(|c| c.id);

    let mut summary = TriageSummary::default();
    for cluster in ordered {
        let mut descriptions = Vec::with_capacity(cluster.members.len());
        let mut crash_count = 0;
        for id in &cluster.members {
            let report = reports
                .get(id)
                .ok_or_else(|| TriageError::DanglingReference(id.clone()))?;
            descriptions.push(report.describe());
            crash_count += 1 + folded.get(id.as_str()).copied().unwrap_or(0);
        }
        summary.totals.raw += crash_count;
        summary.totals.deduplicated += cluster.members.len();
        summary.clusters.push(ClusterDigest {
            id: cluster.id,
            crash_count,
            descriptions,
        });
    }
    summary.totals = TriageTotals {
        clusters: summary.clusters.len(),
        ..summary.totals
    };
    Ok(summary)
}
