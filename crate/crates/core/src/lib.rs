//! Zero-sum stochastic differential games between an impulse controller and
//! a continuous controller, with nonlinear BSDE-driven payoffs.

pub mod error;
pub mod bsde;
pub mod forward;
pub mod model;
pub mod qvi;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub mod configuration {}
    #[doc = include_str!("../../../book/src/grid-solver.md")]
    pub mod grid_solver {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    pub mod monte_carlo {}
    #[doc = include_str!("../../../book/src/verification.md")]
    pub mod verification {}
}
