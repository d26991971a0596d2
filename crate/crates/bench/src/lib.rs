//! Criterion benchmarks of the solvers; see `benches/solvers.rs`.
