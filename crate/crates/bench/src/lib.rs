//! Criterion benchmarks for the engine's hot paths; see `benches/`.
