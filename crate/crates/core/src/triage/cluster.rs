//! Agglomerative complete-linkage clustering of deduplicated reports.
//!
//! The distance between two clusters is the largest pairwise distance
//! between their members. Starting from singletons, the closest pair of
//! clusters is merged while that distance is below the threshold. Ties go to
//! the pair whose smallest member ids sort first: the pair is keyed by the
//! lesser of the two clusters' minimum ids, then the greater.

use rayon::prelude::*;

use super::similarity::{dist, SimilarityParams};
use crate::model::{Cluster, CrashReport, StackTrace};

/// Clusters reports by their significant frames (frames whose origin the
/// filter did not mark as runtime or library code).
///
/// Reports are expected to be deduplicated, so ids are unique.
pub fn cluster(reports: &[CrashReport], p: &SimilarityParams) -> Vec<Cluster> {
    let items: Vec<(String, StackTrace)> = reports
        .iter()
        .map(|r| (r.id.clone(), r.trace.significant()))
        .collect();
    cluster_traces(&items, p)
}

/// Clusters `(id, trace)` pairs; traces are compared as given.
pub fn cluster_traces(items: &[(String, StackTrace)], p: &SimilarityParams) -> Vec<Cluster> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].0.cmp(&items[b].0));
    let sorted: Vec<&(String, StackTrace)> = order.iter().map(|&i| &items[i]).collect();

    let n = sorted.len();
    let matrix: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Less => dist(&sorted[i].1, &sorted[j].1, p),
                    // Filled from the upper triangle below.
                    std::cmp::Ordering::Greater => f64::NAN,
                })
                .collect()
        })
        .collect();
    let mut matrix = matrix;
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        for j in 0..i {
            matrix[i][j] = matrix[j][i];
        }
    }

    complete_linkage(matrix, p.threshold)
        .into_iter()
        .enumerate()
        .map(|(k, group)| {
            let members: Vec<String> = group.iter().map(|&i| sorted[i].0.clone()).collect();
            Cluster {
                id: k as u32 + 1,
                representative: members[0].clone(),
                members,
            }
        })
        .collect()
}

/// Runs the merge loop on a symmetric distance matrix whose row order is the
/// tie-break order. Returns groups of row indices, each sorted, ordered by
/// their smallest index.
pub fn complete_linkage(mut d: Vec<Vec<f64>>, threshold: f64) -> Vec<Vec<usize>> {
    let n = d.len();
    // Slot `i` holds the cluster whose smallest member is `i`.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if members[a].is_none() {
                continue;
            }
            for b in a + 1..n {
                if members[b].is_none() {
                    continue;
                }
                let dab = d[a][b];
                if dab >= threshold {
                    continue;
                }
                // Scanning (a, b) in increasing order means a strict `<`
                // keeps the lexicographically smallest pair among ties.
                if best.is_none_or(|(bd, _, _)| dab < bd) {
                    best = Some((dab, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };

        let absorbed = members[b].take().expect("active slot");
        let target = members[a].as_mut().expect("active slot");
        target.extend(absorbed);
        target.sort_unstable();
        for k in 0..n {
            if k != a && members[k].is_some() {
                let merged = d[a][k].max(d[b][k]);
                d[a][k] = merged;
                d[k][a] = merged;
            }
        }
    }

    members.into_iter().flatten().collect()
}
