//! Simulation and analysis library for grant-free activity detection in
//! massive MIMO, treated as joint-sparse support recovery across multiple
//! measurement vectors.
//!
//! The crate is organized around five pieces:
//!
//! * [`system_model`] draws all random objects of the measurement model
//!   (signature codes, channel gains, activity patterns) and synthesizes
//!   received slots.
//! * [`detectors`] implements the decision statistics and the detectors:
//!   plain thresholding, the opportunistic maximum-correlation detector
//!   (OMC), the opportunistic two-threshold detector (OTD), and the
//!   full-CSI limiting case.
//! * [`baselines`] holds a simultaneous orthogonal matching pursuit
//!   reference and a thresholding demo on fully independent per-antenna
//!   sensing matrices.
//! * [`bounds`] evaluates closed-form upper bounds on the probability of
//!   support-recovery failure and solves the associated minimum code-length
//!   inequalities.
//! * [`harness`] runs seeded Monte Carlo experiments, bound sweeps, and
//!   mean-verification reports, with CSV/JSON emission.
//!
//! All numeric code is generic over the scalar type through [`Scalar`];
//! `f64` aliases for the common entry points live at the crate root.

pub mod baselines;
pub mod bounds;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mat;
pub mod rng;
pub mod scalar;
pub mod system_model;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision matrix.
pub type Mat64 = mat::Mat<f64>;
/// Single-precision matrix.
pub type Mat32 = mat::Mat<f32>;
/// Double-precision scenario configuration.
pub type SystemConfig64 = system_model::SystemConfig<f64>;
/// Double-precision bound inputs.
pub type BoundInputs64 = bounds::BoundInputs<f64>;
/// Double-precision experiment specification.
pub type ExperimentSpec64 = harness::ExperimentSpec<f64>;
