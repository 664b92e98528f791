//! Adaptive input-stride inference, throughput benchmarking and report files.

mod adaptive;
mod report;
mod throughput;

pub use adaptive::{
    adaptive_infer, AdaptiveConfig, AdaptiveOutput, StrideController, StrideSwitch, VelocitySource,
};
pub use report::{
    emit_report, read_bench_csv, read_histogram_csv, read_metrics_csv, write_bench_csv,
    write_histogram_csv, write_metrics_csv, Report, ReportFormat,
};
pub use throughput::{bench_throughput, BenchReport, FLOPS_CONVENTION, PPS_PROTOCOL};
