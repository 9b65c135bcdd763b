//! Simulation and analysis of entanglement-based key distribution with
//! nonmaximally entangled pairs and strongly biased basis choices.
//!
//! A session draws `N` photon pairs from one of two equivalent source states,
//! lets Alice and Bob measure with heavily biased basis probabilities, optionally
//! runs a biased intercept-resend attack on Bob's photon, sifts the compatible
//! events into six subsets, and tests each subset's error rate separately.

pub mod adversary;
pub mod analysis;
pub mod cli;
pub mod error;
pub mod postprocess;
pub mod quantum;
pub mod session;

pub use error::{Error, Result};
