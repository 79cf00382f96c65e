//! Three-step self-training: primary benchmarks on human labels, pseudo-labels from the best
//! primary, and warm-started final models on the union with test patients held out.

pub mod ledger;
pub mod plan;
pub mod steps;

pub use ledger::{audit_ledger, sha256_hex, ArtifactRef, BenchmarkRecord, PseudoRecord, RunLedger, StageRecord, StageStatus, LEDGER_FILE};
pub use plan::{select_best, MetricsSummary, SelectionMetric, SelfTrainPlan, WarmStartSource};
pub use steps::{assemble_final_train, FinalResult, FinalTrainSet, PrimaryResult, RunReport, SelfTrainRun, StageResult, Step1Outcome};
