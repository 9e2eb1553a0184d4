use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fuzzpipe::model::{StackFrame, StackTrace};
use fuzzpipe::parsers::parse_report;
use fuzzpipe::triage::{
    build_report, cluster_traces, dedup, similarity, FilterRules, SimilarityParams,
};

const FUNCS: &[&str] = &[
    "load", "parse", "decode", "check", "run", "step", "read", "seek",
];

// xorshift, so runs are reproducible without pulling in an RNG crate.
fn next(state: &mut u64) -> u64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    *state
}

fn trace(state: &mut u64, len: usize) -> StackTrace {
    (0..len)
        .map(|_| {
            let r = next(state);
            StackFrame::new(
                format!("$SRC/m{}.py", r % 4),
                FUNCS[(r >> 8) as usize % FUNCS.len()],
                Some((r >> 16) as u32 % 500 + 1),
            )
        })
        .collect()
}

fn traceback(state: &mut u64, depth: usize) -> String {
    let mut s = String::from("Traceback (most recent call last):\n");
    for f in trace(state, depth).iter() {
        s.push_str(&format!(
            "  File \"{}\", line {}, in {}\n    x = y\n",
            f.file,
            f.line.unwrap_or(1),
            f.function
        ));
    }
    s.push_str("ValueError: bad\n");
    s
}

fn bench_similarity(c: &mut Criterion) {
    let p = SimilarityParams::default();
    let mut state = 0x9e37_79b9_7f4a_7c15;
    let mut group = c.benchmark_group("similarity");
    for len in [8, 32, 128] {
        let a = trace(&mut state, len);
        let b = trace(&mut state, len);
        group.bench_with_input(
            BenchmarkId::from_parameter(len),
            &(a, b),
            |bench, (a, b)| bench.iter(|| similarity(black_box(a), black_box(b), &p)),
        );
    }
    group.finish();
}

fn bench_cluster(c: &mut Criterion) {
    let p = SimilarityParams::default();
    let mut state = 0x2545_f491_4f6c_dd1d;
    let mut group = c.benchmark_group("cluster");
    group.sample_size(10);
    for n in [50, 200] {
        let items: Vec<(String, StackTrace)> = (0..n)
            .map(|i| (format!("r{i:04}"), trace(&mut state, 12)))
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &items, |bench, items| {
            bench.iter(|| cluster_traces(black_box(items), &p))
        });
    }
    group.finish();
}

fn bench_parse_and_dedup(c: &mut Criterion) {
    let rules = FilterRules::default();
    let mut state = 0xdead_beef_cafe_f00d;
    let texts: Vec<String> = (0..345).map(|_| traceback(&mut state, 10)).collect();
    c.bench_function("parse_traceback_depth10", |bench| {
        bench.iter(|| parse_report(black_box(&texts[0])))
    });
    let created = fuzzpipe::model::now_utc();
    let reports: Vec<_> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            build_report(
                t.as_bytes(),
                format!("crash-{i}"),
                "bench",
                &rules,
                None,
                created,
            )
            .unwrap()
        })
        .collect();
    c.bench_function("dedup_345", |bench| {
        bench.iter(|| dedup(black_box(&reports), &rules))
    });
}

criterion_group!(
    benches,
    bench_similarity,
    bench_cluster,
    bench_parse_and_dedup
);
criterion_main!(benches);
