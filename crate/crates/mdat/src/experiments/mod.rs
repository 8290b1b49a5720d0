//! Experiment protocols: within-corpus, cross-language, k-shot adaptation
//! and the module ablation grid, plus their reports.

mod gradcheck;
mod parallel;
mod protocols;
mod report;

pub use gradcheck::{gradcheck_model, gradcheck_suite, GradcheckRow, GRADCHECK_EPS};
pub use parallel::run_cells;
pub use protocols::{
    eval_pool, kshot_adapt, kshot_pool, run_ablation, run_cross_language, run_kshot, run_within, within_split,
    Adapted, Plan, Protocol, Run, RunRecord,
};
pub use report::{ablation_table, cross_table, kshot_table, within_table, Report, Table};
