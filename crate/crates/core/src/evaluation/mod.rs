//! Metrics, paired one-tailed t-tests and the replication harness.

pub mod bench;
pub mod metrics;
pub mod stats;

pub use bench::{run_benchmark, BenchConfig, BenchMetric, BenchReport, ComparisonCell};
pub use metrics::{accuracy, auc, evaluate, Metrics};
pub use stats::{compare, paired_t_test_one_tailed, student_t_cdf, TestResult, Verdict};
