//! Criterion benchmarks for the lipwave workspace. Run with `cargo bench -p lipwave-bench`.
