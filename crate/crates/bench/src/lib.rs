//! Criterion benchmarks for the ranking, transport, and correspondence paths.
//! Run with `cargo bench -p corrxai-bench`.
