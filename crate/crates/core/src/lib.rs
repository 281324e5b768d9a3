//! Software jamming emulator for clustered cellular networks.
//!
//! The crate models a network of base stations and users degraded by a
//! single proactive or reactive jammer. Signals are handled at two levels:
//! baseband IQ for waveform synthesis and the spectrogram, and a link
//! abstraction (per-subband SINR mapped to throughput) for network metrics.

pub mod channel;
pub mod engine;
pub mod experiments;
pub mod jammer;
pub mod network;
pub mod rng;
pub mod scenario;
pub(crate) mod serde_db;
pub mod service;
pub mod waveforms;
