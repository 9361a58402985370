//! A laboratory for fair node classification under adversarially missing
//! sensitive attributes.
//!
//! The crate implements a 3-player adversarial training scheme (classifier,
//! sensitive-attribute adversary, worst-case imputer) on top of a minimal
//! dense reverse-mode differentiation engine, together with baseline fair
//! trainers, missingness-process generators, a stochastic block model
//! benchmark, fairness/utility metrics, and a deterministic sweep harness.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod missingness;
pub mod models;
pub mod rng;
pub(crate) mod textio;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
