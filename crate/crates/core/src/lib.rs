//! Simulation and analysis toolkit for a room-temperature 1550 nm
//! single-photon detector built from a black-phosphorus absorber on a
//! van der Waals charge-sensing transistor.
//!
//! * [`materials`]: tabulated optical constants
//! * [`tmm`]: transfer-matrix absorption of the layer stack
//! * [`source`]: weak coherent pulse trains and power calibration
//! * [`detsim`]: Monte Carlo of the capture / readout / reset cycle
//! * [`analysis`]: event recovery, histograms and efficiency estimators
//! * [`config`]: experiment configuration documents

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detsim;
pub mod materials;
pub mod source;
pub mod tmm;
