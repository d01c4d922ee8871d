//! Game instances: coefficients, action sets, structural constants.

pub mod catalog;
pub mod config;
pub mod expr;
pub mod problem;
pub mod validate;

pub use config::{build_problem, Config};
pub use expr::{Env, Expr, Signature};
pub use problem::{hamiltonian, Constants, ProblemSpec, Sources};
pub use validate::{sample_points, validate_assumptions, SamplePoint, ValidationReport};

/// Parse a coefficient source against a variable signature.
pub fn parse_coefficient(source: &str, signature: &Signature) -> crate::Result<Expr> {
    Expr::parse(source, signature)
}
