//! Criterion benchmarks for the sketching pipeline live in `benches/`.
