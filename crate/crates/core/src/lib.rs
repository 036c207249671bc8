//! Multi-cell 5G downlink system-level simulator for URLLC/eMBB multiplexing.
//!
//! The crate is layered bottom-up:
//!
//! * [`channel`]: correlated Rayleigh MIMO channels, codebook and SVD feedback.
//! * [`phy`]: LMMSE-IRC combining, post-combining SINR, zero-forcing, pairing metrics.
//! * [`linkadapt`]: CQI pipeline, MCS selection, HARQ chase combining and decoding.
//! * [`traffic`]: Poisson URLLC arrivals, latency bookkeeping, arrival traces.
//! * [`scheduler`]: the PF, WPF, PS, MUPS and C-MUPS policies.
//! * [`engine`]: the mini-slot simulation loop and its metrics.
//! * [`config`] and [`experiment`]: configuration, sweeps and result files.

pub mod carrier;
pub mod config;
pub mod channel;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod linkadapt;
pub mod phy;
pub mod scheduler;
pub mod traffic;

pub use error::{Result, SimError};
