//! Numerics for branching random walks in random environment.

pub mod env;
pub mod error;
pub mod fkpp;
pub mod hitmgf;
pub mod lattice;
pub mod pam;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tilt;
pub mod verify;

pub use error::{Error, Result};

/// Code blocks of the guide in `book/`, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/lyapunov.md")]
    mod lyapunov {}
    #[doc = include_str!("../../../book/src/pam.md")]
    mod pam {}
    #[doc = include_str!("../../../book/src/fkpp.md")]
    mod fkpp {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
}
