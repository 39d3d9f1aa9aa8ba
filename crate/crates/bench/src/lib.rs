//! Benchmarks for the twin and annealer hot paths. See `benches/`.
