//! Criterion benchmarks for the stsc hot paths; see `benches/`.
