//! Detection matching, PPV/sensitivity, all-point AP, F1 sweeps and benchmark aggregates.

pub mod aggregate;
pub mod matching;
pub mod metrics;
pub mod report;

pub use aggregate::{aggregate_benchmarks, aggregate_rows, benchmark_table_markdown, Aggregate, BenchmarkRow, MeanStd};
pub use matching::{match_detections, matching_order, MatchResult};
pub use metrics::{average_precision, counts_at, f1, f1_sweep, pr_curve, pr_metrics, ApConvention, Counts, F1Sweep, PrMetrics, Scored};
pub use report::{evaluate, EvalConfig, EvalImage, MetricsReport, OperatingPoint, PatientMetrics};
