//! Discrete-event simulator of a multi-agent autonomous materials laboratory.
//!
//! Agents run Bayesian active-learning loops against a shared simulated
//! facility: phase-mapping agents cluster Raman spectra into structural
//! regions, functional-property agents model a piezoelectric response, and
//! the architecture decides how much they see of each other's data and
//! decisions.

pub mod acquisition;
pub mod agents;
pub mod config;
pub mod domain;
pub mod error;
pub mod inference;
pub mod lab;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod truth;
