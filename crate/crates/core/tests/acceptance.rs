//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

mod common;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::panic;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, Utc};
use fuzzpipe::config::{parse_config, CampaignConfig};
use fuzzpipe::corpus::{minimize, SeedCoverage};
use fuzzpipe::coverage::{export_lcov, CoverageMap};
use fuzzpipe::model::{StackTrace, TriageSummary};
use fuzzpipe::orchestrator::{evaluate_stop, CampaignState, StopReason};
use fuzzpipe::parsers::{decode_report, parse_report};
use fuzzpipe::triage::{self, cluster_traces, dist, similarity, FilterRules, SimilarityParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Template<'a> = (&'a [(&'a str, u32, &'a str)], &'a str);
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

const LOADER: &[(&str, u32, &str)] = &[
    ("$SRC/fuzz_loader.py", 21, "<module>"),
    ("$SRC/loader/api.py", 88, "load"),
    ("$SRC/loader/io.py", 140, "read_header"),
    ("$SRC/loader/io.py", 57, "check_magic"),
];

const UNPICKLE: &[(&str, u32, &str)] = &[
    ("$SRC/fuzz_loader.py", 21, "<module>"),
    ("$SRC/loader/serialize.py", 301, "restore"),
    ("$SRC/loader/serialize.py", 412, "_rebuild_tensor"),
    ("$SRC/loader/storage.py", 73, "resize_"),
    ("$SRC/loader/storage.py", 19, "_check_size"),
];

fn synthetic_reports(
    rng: &mut ChaCha8Rng,
    templates: &[Template],
    n: usize,
) -> Vec<fuzzpipe::CrashReport> {
    let rules = FilterRules::default();
    let created = DateTime::<Utc>::UNIX_EPOCH;
    (0..n)
        .map(|i| {
            let (template, exception) = templates[i % templates.len()];
            let text = common::noisy_traceback(rng, template, exception);
            triage::build_report(
                text.as_bytes(),
                format!("crash-{i:04}"),
                "synthetic",
                &rules,
                None,
                created,
            )
            .expect("synthetic report parses")
        })
        .collect()
}

fn triage_counts(reports: &[fuzzpipe::CrashReport]) -> (usize, usize, TriageSummary) {
    let rules = FilterRules::default();
    let p = SimilarityParams::default();
    let deduped = triage::dedup(reports, &rules);
    let clusters = triage::cluster(&deduped.representatives, &p);
    let by_id = deduped
        .representatives
        .iter()
        .map(|r| (r.id.clone(), r.clone()))
        .collect();
    let summary =
        triage::summarize(&clusters, &by_id, &deduped.duplicates).expect("consistent clusters");
    (deduped.representatives.len(), clusters.len(), summary)
}

fn table_replication() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(345);
    let two = synthetic_reports(
        &mut rng,
        &[
            (LOADER, "ValueError: invalid magic number"),
            (
                UNPICKLE,
                "RuntimeError: Trying to resize storage that is not resizable",
            ),
        ],
        345,
    );
    let distinct_raw: BTreeSet<&str> = two.iter().map(|r| r.raw_report.as_str()).collect();
    let (dedup_two, clusters_two, summary_two) = triage_counts(&two);
    let one = synthetic_reports(
        &mut rng,
        &[(LOADER, "ValueError: invalid magic number")],
        190,
    );
    let (dedup_one, clusters_one, summary_one) = triage_counts(&one);
    let elapsed = started.elapsed();

    check(distinct_raw.len() > 2, || {
        "noise produced no variation".into()
    })?;
    check(dedup_two == 2 && clusters_two == 2, || {
        format!("345 reports -> {dedup_two} deduplicated, {clusters_two} clusters")
    })?;
    check(dedup_one == 1 && clusters_one == 1, || {
        format!("190 reports -> {dedup_one} deduplicated, {clusters_one} clusters")
    })?;
    check(
        summary_two.totals.raw == 345 && summary_one.totals.raw == 190,
        || "summary totals lose crashes".into(),
    )?;
    check(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "345 -> {dedup_two} -> {clusters_two}, 190 -> {dedup_one} -> {clusters_one} in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn similarity_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let p = SimilarityParams::default();
    let mut worst_oracle = 0.0f64;
    for _ in 0..500 {
        let a = common::random_trace(&mut rng, 12);
        let b = common::random_trace(&mut rng, 12);
        let ab = similarity(&a, &b, &p);
        check(ab == similarity(&b, &a, &p), || {
            format!("asymmetric on {a:?} / {b:?}")
        })?;
        check((0.0..=1.0).contains(&ab), || format!("{ab} out of range"))?;
        if !a.is_empty() {
            let aa = similarity(&a, &a, &p);
            check((aa - 1.0).abs() <= 1e-12, || {
                format!("self-similarity {aa}")
            })?;
        }
    }
    for _ in 0..500 {
        let a = common::random_trace(&mut rng, 6);
        let b = common::random_trace(&mut rng, 6);
        let got = similarity(&a, &b, &p);
        let want = common::brute_similarity(&a, &b, &p);
        worst_oracle = worst_oracle.max((got - want).abs());
    }
    check(worst_oracle <= 1e-9, || {
        format!("oracle disagreement {worst_oracle:e}")
    })?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "500 pairs symmetric and bounded; max oracle error {worst_oracle:.1e}; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut merges = 0usize;
    for round in 0..50 {
        let n = rng.gen_range(1..=8);
        // Short traces over few keys give many exact distance ties.
        let traces: Vec<StackTrace> = (0..n).map(|_| common::random_trace(&mut rng, 3)).collect();
        let threshold = [0.3, 0.5, 0.7, 0.9][round % 4];
        let p = SimilarityParams {
            threshold,
            ..SimilarityParams::default()
        };
        let items: Vec<(String, StackTrace)> = traces
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("r{i}"), t.clone()))
            .collect();
        let d: Vec<Vec<f64>> = traces
            .iter()
            .map(|a| traces.iter().map(|b| dist(a, b, &p)).collect())
            .collect();
        let want: Vec<Vec<String>> = common::brute_complete_linkage(&d, threshold)
            .into_iter()
            .map(|c| c.into_iter().map(|i| format!("r{i}")).collect())
            .collect();
        let mut got: Vec<Vec<String>> = cluster_traces(&items, &p)
            .into_iter()
            .map(|c| c.members)
            .collect();
        got.sort();
        check(got == want, || {
            format!("round {round}: got {got:?}, oracle {want:?}")
        })?;
        merges += n - want.len();
    }
    Ok(format!(
        "50 random sets match the oracle exactly ({merges} merges)"
    ))
}

fn generated_python(rng: &mut ChaCha8Rng) -> (String, Vec<(String, u32, String)>) {
    let depth = rng.gen_range(1..=8);
    let frames: Vec<(String, u32, String)> = (0..depth)
        .map(|_| {
            (
                format!(
                    "{}/{}.py",
                    ["$SRC", "/usr/lib/python3.10", "/opt/app"]
                        .choose(rng)
                        .unwrap(),
                    rng.gen_range(0..50)
                ),
                rng.gen_range(1..5000),
                common::FUNCS.choose(rng).unwrap().to_string(),
            )
        })
        .collect();
    let borrowed: Vec<(&str, u32, &str)> = frames
        .iter()
        .map(|(f, l, n)| (f.as_str(), *l, n.as_str()))
        .collect();
    let exception = [
        "ValueError: bad",
        "KeyError: 'k'",
        "RuntimeError",
        "struct.error: unpack requires a buffer",
    ]
    .choose(rng)
    .unwrap();
    (common::python_traceback(&borrowed, exception), frames)
}

fn generated_sanitizer(rng: &mut ChaCha8Rng) -> (String, Vec<(String, u32)>) {
    let depth = rng.gen_range(1..=10);
    let frames: Vec<(String, u32)> = (0..depth)
        .map(|_| {
            (
                format!("fn_{}", rng.gen_range(0..100)),
                rng.gen_range(1..3000),
            )
        })
        .collect();
    let category = [
        "heap-buffer-overflow",
        "heap-use-after-free",
        "stack-buffer-overflow",
        "global-buffer-overflow",
    ]
    .choose(rng)
    .unwrap();
    let mut s = format!(
        "=={pid}==ERROR: AddressSanitizer: {category} on address 0x60200000{addr:04x} at pc 0x55d0 bp 0x7ffc sp 0x7ffc\n",
        pid = rng.gen_range(1..99999),
        addr = rng.gen_range(0..0xffff)
    );
    let _ = writeln!(
        s,
        "{} of size {} at 0x602000000010 thread T0",
        ["READ", "WRITE"].choose(rng).unwrap(),
        rng.gen_range(1..9)
    );
    for (i, (func, line)) in frames.iter().enumerate() {
        let _ = writeln!(
            s,
            "    #{i} 0x55d0{:06x} in {func} $SRC/lib.c:{line}:{}",
            rng.gen_range(0..0xffffff),
            rng.gen_range(1..80)
        );
    }
    s.push_str("\n0x602000000010 is located 0 bytes to the right of 16-byte region\nSUMMARY: AddressSanitizer\n");
    (s, frames)
}

fn fixture_texts() -> Vec<String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .filter(|p| !p.ends_with("libfuzzer_status.txt"))
        .map(|p| std::fs::read_to_string(p).unwrap())
        .collect()
}

fn parser_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100_000);
    let fixtures = fixture_texts();
    for text in &fixtures {
        parse_report(text).map_err(|e| format!("fixture failed to parse: {e}"))?;
    }
    for _ in 0..1000 {
        let (text, frames) = generated_python(&mut rng);
        let (trace, _) = parse_report(&text).map_err(|e| format!("generated traceback: {e}"))?;
        let got: Vec<(String, u32, String)> = trace
            .iter()
            .map(|f| (f.file.clone(), f.line.unwrap_or(0), f.function.clone()))
            .collect();
        let mut want = frames.clone();
        want.reverse();
        check(got == want, || format!("inversion broken for\n{text}"))?;

        let (text, frames) = generated_sanitizer(&mut rng);
        let (trace, _) =
            parse_report(&text).map_err(|e| format!("generated sanitizer report: {e}"))?;
        let got: Vec<(String, u32)> = trace
            .iter()
            .map(|f| (f.function.clone(), f.line.unwrap_or(0)))
            .collect();
        check(got == frames, || {
            format!("sanitizer frames out of order for\n{text}")
        })?;
    }

    // Random bytes, plus mutated real reports to reach deeper parser states.
    let seeds: Vec<Vec<u8>> = fixtures.iter().map(|t| t.as_bytes().to_vec()).collect();
    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut aborts = 0usize;
    let total = 100_000usize;
    for i in 0..total {
        let input: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..256);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut bytes = seeds.choose(&mut rng).unwrap().clone();
            for _ in 0..rng.gen_range(1..8) {
                match rng.gen_range(0..3) {
                    0 if !bytes.is_empty() => {
                        let at = rng.gen_range(0..bytes.len());
                        bytes[at] = rng.gen();
                    }
                    1 => {
                        let cut = rng.gen_range(0..=bytes.len());
                        bytes.truncate(cut);
                    }
                    _ => {
                        let at = rng.gen_range(0..=bytes.len());
                        bytes.insert(at, *b"\n#0123456789: ".choose(&mut rng).unwrap());
                    }
                }
            }
            bytes
        };
        if panic::catch_unwind(|| parse_report(&decode_report(&input))).is_err() {
            aborts += 1;
        }
    }
    panic::set_hook(previous_hook);
    let elapsed = started.elapsed();
    check(aborts == 0, || {
        format!("{aborts} of {total} inputs panicked")
    })?;
    check(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} fixtures, 2000 generated reports, {total} arbitrary inputs, 0 aborts in {:.1}s",
        fixtures.len(),
        elapsed.as_secs_f64()
    ))
}

fn random_seeds(rng: &mut ChaCha8Rng, n: usize) -> Vec<SeedCoverage> {
    (0..n)
        .map(|i| {
            let path = format!("seed-{i:02}");
            let size = rng.gen_range(1..100);
            if rng.gen_ratio(1, 10) {
                return SeedCoverage::unexecutable(path, size);
            }
            let k = rng.gen_range(0..8);
            SeedCoverage::new(path, size, (0..k).map(|_| rng.gen_range(0..30u64)))
        })
        .collect()
}

fn union(seeds: &[SeedCoverage], kept: Option<&[PathBuf]>) -> BTreeSet<u64> {
    seeds
        .iter()
        .filter(|s| kept.is_none_or(|k| k.contains(&s.seed_path)))
        .flat_map(|s| s.features.iter().copied())
        .collect()
}

fn cmin_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut greedy_total, mut optimum_total, mut optimal_hits, mut small) =
        (0usize, 0usize, 0usize, 0usize);
    for round in 0..200 {
        let n = rng.gen_range(0..=20);
        let seeds = random_seeds(&mut rng, n);
        let kept = minimize(&seeds);
        check(union(&seeds, Some(&kept)) == union(&seeds, None), || {
            format!("round {round}: coverage lost")
        })?;
        let survivors: Vec<SeedCoverage> = seeds
            .iter()
            .filter(|s| kept.contains(&s.seed_path))
            .cloned()
            .collect();
        check(minimize(&survivors) == kept, || {
            format!("round {round}: not idempotent")
        })?;
        let mut shuffled = seeds.clone();
        shuffled.shuffle(&mut rng);
        check(minimize(&shuffled) == kept, || {
            format!("round {round}: order dependent")
        })?;
        if n <= 10 {
            let features: Vec<BTreeSet<u64>> = seeds
                .iter()
                .filter(|s| s.executable)
                .map(|s| s.features.clone())
                .collect();
            let best = common::brute_min_cover(&features);
            greedy_total += kept.len();
            optimum_total += best;
            optimal_hits += usize::from(kept.len() == best);
            small += 1;
        }
    }
    Ok(format!(
        "200 sets preserved, idempotent, order independent; on {small} sets of <= 10 seeds greedy kept {greedy_total} vs optimum {optimum_total} ({optimal_hits} optimal)"
    ))
}

fn at(start: DateTime<Utc>, secs: i64) -> DateTime<Utc> {
    start + TimeDelta::seconds(secs)
}

fn stop_conditions() -> Outcome {
    let minimal = "[target]\nname = \"t\"\nfuzz_command = [\"f\"]\nrun_command = [\"r\"]\n";
    let config = parse_config(minimal, Path::new("/")).map_err(|e| e.to_string())?;
    check(
        config.exit_on_time_sec == 3600 && config.max_total_time_sec == 86_400,
        || {
            format!(
                "defaults {} / {}",
                config.exit_on_time_sec, config.max_total_time_sec
            )
        },
    )?;
    let reloaded: CampaignConfig =
        parse_config(&config.to_toml_string(), Path::new("/")).map_err(|e| e.to_string())?;
    check(reloaded == config, || {
        "config round trip changed values".into()
    })?;

    let start = DateTime::<Utc>::UNIX_EPOCH;
    let mut state = CampaignState::new(start);
    state.observe_coverage(10, start);
    check(
        evaluate_stop(&state, &config, at(start, 3599)).is_none(),
        || "stopped before 3600s".into(),
    )?;
    check(
        evaluate_stop(&state, &config, at(start, 3600)) == Some(StopReason::NoNewCoverage),
        || "no stop at exactly 3600s without coverage".into(),
    )?;

    // Coverage that keeps growing every half hour defers the idle stop, so
    // only the total budget can end the run.
    let mut state = CampaignState::new(start);
    let mut counter = 0;
    let mut first_stop = None;
    for t in 0..=86_400i64 {
        if t % 1800 == 0 {
            counter += 1;
            state.observe_coverage(counter, at(start, t));
        }
        if let Some(reason) = evaluate_stop(&state, &config, at(start, t)) {
            first_stop = Some((t, reason));
            break;
        }
    }
    check(
        first_stop == Some((86_400, StopReason::MaxTotalTime)),
        || format!("first stop {first_stop:?}"),
    )?;
    Ok("NoNewCoverage at exactly 3600s, MaxTotalTime at exactly 86400s; defaults survive round trip".into())
}

fn lcov_golden() -> Outcome {
    let mut map = CoverageMap::new();
    map.record("a.py", 1).unwrap();
    map.record("a.py", 3).unwrap();
    map.set_total("a.py", 3).unwrap();
    let got = export_lcov(&map);
    let want = "SF:a.py\nDA:1,1\nDA:2,0\nDA:3,1\nLH:2\nLF:3\nend_of_record\n";
    check(got == want, || format!("got {got:?}"))?;
    Ok("3-line example matches byte for byte".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("triage-table-replication", table_replication),
        ("similarity-metric", similarity_suite),
        ("clustering-oracle", clustering_oracle),
        ("parser-suite", parser_suite),
        ("cmin-properties", cmin_properties),
        ("stop-conditions", stop_conditions),
        ("lcov-golden", lcov_golden),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
