//! Paired RGB/infrared synthesis, detection and illumination-aware late fusion.
//!
//! The crate is `no_std` with `alloc`. The default `std` feature only switches
//! the numeric backends (GEMM kernels, libm) to their std-accelerated paths;
//! file formats, the command line and timing live in the `rgbir` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod detector;
mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod ian;
pub mod image;
mod math;
pub mod nn;
pub mod rng;
pub mod style;
pub mod thermal;

pub use crate::error::{Error, Result};
pub use crate::geometry::{BoundingBox, ClassId, Detection, Modality};
pub use crate::image::Image;
