//! Benchmark helpers; see `benches/pipeline.rs`.
