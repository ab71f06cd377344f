//! Generalized Orlicz growth: Φ-functions and their conditions, growth functions
//! of nonlinearities, autonomous approximants and a 2D variational solver.

pub mod approx;
pub mod conditions;
pub mod error;
pub mod growth;
pub mod phi;
pub mod probes;
pub mod profile;
pub mod quadrature;
pub mod sampling;
pub mod solver;
pub mod structures;

pub use error::{Error, Result};

/// A point of the unit square.
pub type Point = [f64; 2];

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/phi-functions.md")]
    pub struct PhiFunctions;
    #[doc = include_str!("../../../book/src/models.md")]
    pub struct Models;
    #[doc = include_str!("../../../book/src/growth.md")]
    pub struct Growth;
    #[doc = include_str!("../../../book/src/continuity.md")]
    pub struct Continuity;
    #[doc = include_str!("../../../book/src/approximants.md")]
    pub struct Approximants;
    #[doc = include_str!("../../../book/src/solver.md")]
    pub struct Solver;
    #[doc = include_str!("../../../book/src/probes.md")]
    pub struct Probes;
}
