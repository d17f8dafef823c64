//! Criterion benchmarks for the fusion pipeline; see `benches/`.
