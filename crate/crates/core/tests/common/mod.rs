//! Brute-force oracles and synthetic data generators shared by the property
//! and acceptance tests. Nothing here calls the implementation under test
//! except where noted.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use fuzzpipe::model::{StackFrame, StackTrace};
use fuzzpipe::triage::{FilterRules, SimilarityParams};
use rand::seq::SliceRandom;
use rand::Rng;

pub const FILES: &[&str] = &["$SRC/a.py", "$SRC/b.py", "$SRC/c.py"];
pub const FUNCS: &[&str] = &["load", "parse", "decode", "check", "run", "step"];

pub fn random_trace<R: Rng>(rng: &mut R, max_len: usize) -> StackTrace {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| {
            StackFrame::new(
                *FILES.choose(rng).unwrap(),
                *FUNCS.choose(rng).unwrap(),
                Some(rng.gen_range(1..50)),
            )
        })
        .collect()
}

fn weight(i: usize, j: usize, p: &SimilarityParams) -> f64 {
    let top = i.min(j) as f64;
    let gap = (i as f64 - j as f64).abs();
    2f64.powf(-top / p.theta) * 2f64.powf(-gap / p.rho)
}

fn self_weight(n: usize, p: &SimilarityParams) -> f64 {
    (0..n).map(|i| 2f64.powf(-(i as f64) / p.theta)).sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            out.push((0..n).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// Best order-preserving matching found by enumerating every pair of
/// equal-size index subsets. Exponential; only for short traces.
pub fn brute_similarity(a: &StackTrace, b: &StackTrace, p: &SimilarityParams) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return 0.0;
    }
    let norm = self_weight(n, p).max(self_weight(m, p));
    let mut best = 0.0f64;
    for k in 0..=n.min(m) {
        for xs in combinations(n, k) {
            for ys in combinations(m, k) {
                let mut total = 0.0;
                let mut ok = true;
                for (&i, &j) in xs.iter().zip(&ys) {
                    let (fa, fb) = (&a.frames[i], &b.frames[j]);
                    if fa.file != fb.file || fa.function != fb.function {
                        ok = false;
                        break;
                    }
                    total += weight(i, j, p);
                }
                if ok {
                    best = best.max(total);
                }
            }
        }
    }
    (best / norm).clamp(0.0, 1.0)
}

/// Complete-linkage clustering that recomputes every inter-cluster distance
/// from the item matrix at each step. Clusters are named by their smallest
/// member; ties go to the lexicographically smallest (name, name) pair.
pub fn brute_complete_linkage(d: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..d.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in 0..clusters.len() {
                if x == y {
                    continue;
                }
                let (ca, cb) = (&clusters[x], &clusters[y]);
                let (na, nb) = (ca[0], cb[0]);
                if na > nb {
                    continue;
                }
                let mut link = 0.0f64;
                for &i in ca {
                    for &j in cb {
                        link = link.max(d[i][j]);
                    }
                }
                if link >= threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bna, bnb, _, _)) => {
                        link < bd || (link == bd && (na, nb) < (bna, bnb))
                    }
                };
                if better {
                    best = Some((link, na, nb, x, y));
                }
            }
        }
        let Some((_, _, _, x, y)) = best else { break };
        let mut merged = clusters[x].clone();
        merged.extend(clusters[y].iter().copied());
        merged.sort_unstable();
        let (hi, lo) = if x > y { (x, y) } else { (y, x) };
        clusters.remove(hi);
        clusters[lo] = merged;
        clusters.sort();
    }
    clusters.sort();
    clusters
}

/// Groups item indices whose traces are equal after dropping every frame
/// the rules match, comparing (file, function, line) pairwise.
pub fn brute_dedup_groups(traces: &[StackTrace], rules: &FilterRules) -> Vec<Vec<usize>> {
    let keep = |t: &StackTrace| -> Vec<(String, String, Option<u32>)> {
        t.iter()
            .filter(|f| !rules.classify(f).is_filtered())
            .map(|f| (f.file.clone(), f.function.clone(), f.line))
            .collect()
    };
    let keys: Vec<_> = traces.iter().map(keep).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    'outer: for i in 0..traces.len() {
        for g in groups.iter_mut() {
            if keys[g[0]] == keys[i] {
                g.push(i);
                continue 'outer;
            }
        }
        groups.push(vec![i]);
    }
    groups
}

/// Smallest number of seeds whose features cover the union of all seeds'
/// features, by trying every subset.
pub fn brute_min_cover(features: &[BTreeSet<u64>]) -> usize {
    let all: BTreeSet<u64> = features.iter().flatten().copied().collect();
    let n = features.len();
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k >= best {
            continue;
        }
        let covered: BTreeSet<u64> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .flat_map(|i| features[i].iter().copied())
            .collect();
        if covered == all {
            best = k;
        }
    }
    best
}

/// Union of features over the seeds named in `kept`.
pub fn covered_by(seeds: &[(PathBuf, BTreeSet<u64>)], kept: &[PathBuf]) -> BTreeSet<u64> {
    let index: BTreeMap<&PathBuf, &BTreeSet<u64>> = seeds.iter().map(|(p, f)| (p, f)).collect();
    kept.iter().flat_map(|p| index[p].iter().copied()).collect()
}

/// A Python traceback in interpreter order (outermost call first).
pub fn python_traceback(frames: &[(&str, u32, &str)], exception: &str) -> String {
    let mut s = String::from("Traceback (most recent call last):\n");
    for (file, line, func) in frames {
        s.push_str(&format!(
            "  File \"{file}\", line {line}, in {func}\n    pass\n"
        ));
    }
    s.push_str(exception);
    s.push('\n');
    s
}

const NOISE: &[(&str, &str)] = &[
    ("/usr/lib/python3.10/json/decoder.py", "raw_decode"),
    ("/usr/lib/python3.10/json/__init__.py", "loads"),
    ("/usr/lib/python3.11/importlib/__init__.py", "import_module"),
    ("<frozen importlib._bootstrap>", "_call_with_frames_removed"),
    ("$SRC/fuzz_harness.py", "TestOneInput"),
    (
        "/usr/lib/python3/site-packages/atheris/instrument.py",
        "atheris_wrapper",
    ),
];

/// Renders `template` (outermost first) with 0..=3 randomly placed frames
/// that the default filter rules drop, and random line numbers on the noise.
pub fn noisy_traceback<R: Rng>(
    rng: &mut R,
    template: &[(&str, u32, &str)],
    exception: &str,
) -> String {
    let mut frames: Vec<(String, u32, String)> = template
        .iter()
        .map(|(f, l, n)| (f.to_string(), *l, n.to_string()))
        .collect();
    for _ in 0..rng.gen_range(0..=3) {
        let (file, func) = NOISE.choose(rng).unwrap();
        let at = rng.gen_range(0..=frames.len());
        frames.insert(
            at,
            (file.to_string(), rng.gen_range(1..900), func.to_string()),
        );
    }
    let borrowed: Vec<(&str, u32, &str)> = frames
        .iter()
        .map(|(f, l, n)| (f.as_str(), *l, n.as_str()))
        .collect();
    python_traceback(&borrowed, exception)
}

/// A report carrying `trace`, with every other field fixed.
pub fn report_with(id: &str, trace: StackTrace) -> fuzzpipe::CrashReport {
    use fuzzpipe::model::{CrashKind, Severity, SeverityClass};
    fuzzpipe::CrashReport {
        id: id.to_string(),
        seed_path: PathBuf::from(format!("crash-{id}")),
        raw_report: String::new(),
        kind: CrashKind::PythonException {
            exc_type: "ValueError".into(),
            message: String::new(),
        },
        severity: Severity {
            class: SeverityClass::NotExploitable,
            short_description: "ValueError".into(),
        },
        trace,
        crashline: None,
        source_snippet: None,
        target_name: "synthetic".into(),
        created_at: chrono::DateTime::UNIX_EPOCH,
    }
}
