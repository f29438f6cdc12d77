//! Parabolic geometric measure theory at desk scale: metric primitives,
//! dyadic cubes on graphs, Whitney decompositions of graph complements,
//! stopping-time regimes, regularized distances, lifted graph domains,
//! half-order time derivatives, and Carleson-functional diagnostics for
//! finite-difference caloric fields.

pub mod caloric;
pub mod config;
pub mod corona;
pub mod dyadic;
pub mod error;
pub mod halfderiv;
pub mod lift;
pub mod pargeo;
pub mod regdist;
pub mod report;
pub mod whitney;

pub use error::{Error, Result};
