//! Grid solver for the obstacle-form Isaacs equation.

mod grid;
mod io;
mod scheme;
mod solver;

pub use grid::{GridSpec, DEFAULT_TIME_STEPS};
pub use io::{sniff, write_grid_csv, FORMAT_VERSION, POLICY_MAGIC, VALUE_MAGIC};
pub use scheme::{action_candidates, cfl_check, coefficient_bounds, hjb_step, min_over_actions};
pub use solver::{
    extract_policies, intervention_operator, solve_qvi, solve_truncated, solve_truncated_family, ImpulseTable,
    PolicyGrid, Region, SchemeOrdering, ValueGrid,
};
