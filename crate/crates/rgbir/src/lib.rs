//! Filesystem side of the toolkit: the paired dataset layout, checkpoints,
//! CSV side files, configuration, overlays, latency timing and the commands
//! behind the `rgbir` binary.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
mod error;
pub mod io;
pub mod overlay;
pub mod records;

pub use error::{IoError, Result};
pub use rgbir_core as core;
