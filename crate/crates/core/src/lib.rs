//! Limited-view photoacoustic tomography reconstruction.
//!
//! The crate is organised around a spectral forward operator for circular
//! detector arrays ([`waveop`]) and two reconstruction methods built on it:
//! a total-variation primal-dual solver ([`pdhg`]) and a deep image prior
//! engine with a from-scratch U-Net ([`dipnet`]). [`iqa`] provides the
//! ROI-masked quality metrics and [`harness`] ties everything together into
//! reproducible experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dipnet;
pub mod error;
mod fft2;
pub mod geometry;
pub mod harness;
pub mod iqa;
pub mod pdhg;
pub mod variational;
pub mod waveop;

pub use error::{Error, Result};
pub use geometry::{detector_positions, make_ring, subsample_arc, DetectorRing, Grid, TimeAxis};
pub use waveop::{
    approximate_inverse, operator_norm, simulate_data, ForwardOperator, Image, InverseMode,
    TimeSeries,
};
