//! Rotating shallow water simulation with calibrated transport noise.
//!
//! * [`grid`]: C-grid geometry and staggered fields
//! * [`dynamics`]: deterministic solver and spin-up
//! * [`coarsen`]: low-pass mollification and subsampling
//! * [`calibrate`]: increments, decorrelation, stream-function solves, EOFs
//! * [`ensemble`]: stochastic (SALT) integration and ensembles
//! * [`uq`]: ensemble verification metrics

#![allow(clippy::neg_cmp_op_on_partial_ord)] // written so NaN fails the check

pub mod calibrate;
pub mod coarsen;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod snapshot;
pub mod uq;

pub use error::{Error, Result};
pub use grid::{GridSpec, Kind, ModelState, PhysicalParams, StaggeredField};
