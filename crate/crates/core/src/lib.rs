//! Coded-exposure acquisition of high frame rate video.
//!
//! `K` conventional cameras each integrate a `T`-frame shot through a
//! pseudo-random binary shutter code. This crate simulates that acquisition
//! (frame-wise, pixel-wise and column-row-wise codes, optionally through a
//! camera PSF with sub-pixel displacement), recovers the video volume by
//! sparse synthesis (3D DFT) or sparse analysis (Laplacian plus
//! gradient-of-temporal-difference) `l1` minimisation, estimates restricted
//! isometry constants empirically, and runs Monte-Carlo experiments over
//! synthetic scenes.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codes;
pub mod error;
pub mod forward;
pub mod harness;
pub mod operator;
pub mod ripcheck;
pub mod rng;
pub mod solver;
pub mod transforms;

pub use codes::{ExposureCodeSet, Scheme, SignedCodeSet};
pub use error::{Error, Result};
pub use forward::{MeasurementTensor, PsfModel, VideoVolume};
pub use operator::LinearOperator;
