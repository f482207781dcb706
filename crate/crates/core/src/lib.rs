//! Predictive downlink beamforming for integrated sensing and communication
//! in a vehicle-to-infrastructure link.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! - [`system`]: ULA steering vectors, path loss, LoS channels, SINR and sum-rate.
//! - [`kinematics`]: road-parallel vehicle motion and noisy channel histories.
//! - [`crlb`]: echo SNR, delay/Doppler noise variances and closed-form
//!   Cramer-Rao bounds for angle and distance, plus a finite-difference FIM oracle.
//! - [`objective`]: the penalty-transformed training cost and feasibility slacks.
//! - [`autodiff`]: a small reverse-mode engine over real tensors with Adam.
//! - [`hcl`]: the historical-channels convolutional LSTM predictor.
//! - [`training`], [`baselines`]: dataset generation, training, evaluation and
//!   the water-filling, naive and random comparison schemes.
//!
//! IO (configuration files, CSV, plots, checkpoints on disk) lives in the
//! `isac-sim` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod complexity;
pub mod crlb;
mod error;
pub mod hcl;
pub mod kinematics;
pub(crate) mod math;
pub mod objective;
pub mod params;
pub mod rng;
pub mod system;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use params::SystemParams;
pub use system::{BeamformingMatrix, ChannelSnapshot};
