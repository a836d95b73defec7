//! Simulation studies: data generation from known hazards, oracle
//! parameters, `L²` convergence, band coverage and bootstrap baselines.
//!
//! Every random draw flows from the scenario seed. Replication `j` at sample
//! size `n` uses its own ChaCha substream, so studies give the same numbers
//! whatever the size of the worker pool.

mod fit;
mod hazard;
mod oracle;
mod scenario;
mod study;

pub use fit::{sample_at, trace, LazyDriver, Sample};
pub use hazard::HazardSpec;
pub use oracle::{oracle_parameter, richardson_gap};
pub use scenario::{recipe_for, simulate_dataset, Scenario, VarianceTarget};
pub use study::{
    bootstrap_covariance, coverage_rows, coverage_study, covers, l2_convergence, loglog_slope,
    wilson_interval, ConvergenceRow, CoverageRow, L2Target, StudyMeta, StudyResult, StudyRows,
};
