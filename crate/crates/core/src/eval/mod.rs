//! Splits, metrics and the paired multi-split benchmark.

mod benchmark;
mod metrics;
mod split;

pub use benchmark::{
    benchmark_splits, evaluate_split, run_benchmark, split_seed, BenchmarkReport, EvalReport, ModeSpec,
};
pub use metrics::{bpwc, f1, mean_ci, Confusion};
pub use split::{make_split, Setting, SplitSpec, SEMI_BUDGET_CAP, SEMI_BUDGET_SHARE};
