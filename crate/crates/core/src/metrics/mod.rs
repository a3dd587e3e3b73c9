//! Objective speech metrics, significance testing and evaluation reports.

mod report;
mod sisdr;
mod stats;
mod stoi;
mod testset;

pub use report::{
    compare_runs, evaluate, evaluate_with, CompareOptions, Comparison, GroupScore, MetricReport,
    PairLevel, RunColumn, TTestRow, TestItem, UtteranceScore,
};
pub use sisdr::{si_sdr, si_sdr_slices, SI_SDR_CAP_DB};
pub use stats::{
    incomplete_beta, ln_gamma, paired_t_test, relative_improvement_rate, student_t_cdf,
    PairedScores, TTest,
};
pub use stoi::{resample, stoi};
pub use testset::{load_test_set, write_test_set, TestSetEntry};
