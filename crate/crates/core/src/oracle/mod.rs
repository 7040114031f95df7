//! Reference solutions that share no code with the simulators.

pub mod riccati;
