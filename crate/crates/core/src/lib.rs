// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fitter;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod landmarks;
pub mod lifting;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod synthgen;

pub use error::{Error, Result};
pub use landmarks::{LandmarkSet2D, LandmarkSet3D};
