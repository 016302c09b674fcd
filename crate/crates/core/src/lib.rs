//! LiDAR-guided hyperspectral band selection.
//!
//! A two-stream transformer encodes hyperspectral bands and LiDAR channels as
//! separate token sequences; a cross-attention block uses the LiDAR tokens as
//! queries over the band tokens. The head-averaged attention weights, averaged
//! over training samples, rank the bands.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod selection;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
