//! Numerical laboratory for extended mean field games with common noise.
//!
//! The crate simulates the N-player closed-loop game, solves the conditional
//! McKean–Vlasov equilibrium by damped Picard iteration, reconstructs the
//! common noise from measure flows and compares open- and closed-loop
//! mean field control values.

pub mod error;
pub mod measures;
pub mod mfc;
pub mod model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub mod dp;
pub mod interp;
pub mod mfg;
pub mod noise_recovery;
pub mod nplayer;
pub mod oracle;
pub mod policy;
