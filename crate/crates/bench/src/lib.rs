//! Benchmark crate; see `benches/inference.rs`.
