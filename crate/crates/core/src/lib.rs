//! Multipath-exploiting target detection for OFDM integrated sensing and
//! communication.
//!
//! The crate synthesizes delay-Doppler multipath echoes on an OFDM grid,
//! detects the target with a weighted GLRT whose thresholds are calibrated
//! by Monte Carlo, and designs the transmit power allocation and detector
//! weights jointly by alternating maximization.

pub mod channel;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod optimizer;
pub mod reference;
pub mod rng;
pub mod scene;
pub mod stats;
pub mod waveform;

pub use error::{Error, Result};
