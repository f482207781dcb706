//! File formats, experiment runner and command-line front end for `isac-core`.
//!
//! - [`config`]: TOML experiment files with unit-suffixed keys.
//! - [`runner`]: seeded sweeps over power, antennas, vehicles, speed, history
//!   depth, penalty weight and CRLB threshold.
//! - [`results`], [`plot`], [`checkpoint`], [`dataset_io`]: the files a run
//!   writes and how to read them back.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
mod error;
pub mod plot;
pub mod results;
pub mod runner;

pub use error::{SimError, SimResult};
