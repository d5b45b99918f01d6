//! Simulation of multistage, windowed transmit beamforming for a DFRC base
//! station: beam layout, Kaiser window design, RF chain scheduling, pulsed
//! echo synthesis, Capon angle estimation and the Monte-Carlo studies built
//! on top of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod doa;
pub mod error;
pub mod rng;
pub mod scheduler;
pub mod signal;
pub mod study;
pub mod window;

pub use error::{Error, Result};
