//! Criterion benchmarks for the triage algorithms. See `benches/`.
