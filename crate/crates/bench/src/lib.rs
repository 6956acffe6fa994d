//! Criterion benchmarks for the per-tick control path; see `benches/`.
