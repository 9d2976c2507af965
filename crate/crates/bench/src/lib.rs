//! Benchmarks for the `mdmdp` solver live in `benches/`.
