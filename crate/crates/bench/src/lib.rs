//! Benchmarks live in `benches/`; see `cargo bench -p tvflow-bench`.
