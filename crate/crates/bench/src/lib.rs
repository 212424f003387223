//! Criterion benchmarks for cascade-core live under `benches/`.
