//! Single-particle Mach-Zehnder interferometer simulator.
//!
//! Wavepackets are propagated analytically between optical elements and
//! interpreted by three theories: conventional (forward evolution with
//! collapse at detection), advanced (backward evolution with collapse at
//! preparation) and symmetrical (product of a forward and a backward
//! wavefunction, no collapse).

pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod optics;
pub mod oracle;
pub mod render;
pub mod rng;
pub mod scenario;
pub mod session;
pub mod wavepacket;

pub use error::{Error, Result};
