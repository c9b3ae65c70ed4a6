//! Benchmark-only crate: the measurements live in `benches/kernels.rs` and
//! run with `cargo bench -p varesa-bench`.
