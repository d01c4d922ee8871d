//! Statistical and property checks tying the Monte Carlo layer to the grid
//! solver.

mod checks;
mod report;
mod suite;

pub use checks::*;
pub use report::{TestRecord, VerificationReport, SCHEMA_VERSION};
pub use suite::{
    grid_from_config, mc_from_config, orderings, run_suite, COMPARISON_FRACTION, COMPARISON_SHIFT, DPP_STEPS,
    GENERATOR_STEPS, HOLDER_K,
};
