//! Interpretable tree policies for finite-horizon Markov decision processes,
//! and a bootstrap simulator for comparing ventilator triage guidelines.

pub mod cohort;
pub mod error;
pub mod mdp;
pub mod sim;
pub mod tree;
pub mod tree_policy;
pub mod triage;

pub use error::{Error, Result};
