//! Criterion benchmarks for the hsicube kernels live in `benches/`.
