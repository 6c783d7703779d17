//! Quantum quadratic Monge-Kantorovich pseudo-distance between density
//! operators, with phase-space transforms, classical transport and the
//! bounds that relate them.

pub mod bounds;
pub mod classical_ot;
pub mod config;
pub mod error;
pub mod export;
pub mod linalg;
pub mod meanfield;
pub mod oscillator;
pub mod phase_space;
pub mod quantum_ot;
pub mod special;
pub mod suites;
pub mod testkit;

pub use error::{Error, Result};
