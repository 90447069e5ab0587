//! Storage-and-retrieval of qubit von Neumann measurements.
//!
//! An unknown measurement `P_U` is used `N` times; a scheme stores what it
//! learns and later emits an approximation `Q_U`. The crate implements the
//! closed-form schemes ([`pgls`], [`pbt`]), the exact Haar average of the
//! figure of merit ([`twirl`]) and the optimal parallel and adaptive schemes
//! as semidefinite programs ([`sdp`], [`tester`]).

pub mod error;
pub mod linalg;
pub mod pbt;
pub mod pgls;
pub mod quantum;
pub mod sdp;
pub mod tester;
pub mod twirl;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/measurements.md")]
    mod measurements {}
    #[doc = include_str!("../../../book/src/closed-forms.md")]
    mod closed_forms {}
    #[doc = include_str!("../../../book/src/twirl.md")]
    mod twirl {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/testers.md")]
    mod testers {}
}
