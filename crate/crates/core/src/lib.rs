//! Posterior-expected LQR policy synthesis.
//!
//! Learns a static state-feedback gain from rollout data by minimizing the
//! Monte-Carlo average LQR cost over posterior samples of the system,
//! using sequential semidefinite programs.

// `!(x < y)` is used on purpose so that NaN falls on the failing side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod scalar;
pub mod synthesis;

pub use error::{Error, Result};
pub use scalar::{Cost, Real};

pub type System = model::LinearSystem<f64>;
pub type Gain = model::GainPolicy<f64>;
pub type Data = model::Dataset<f64>;
pub type Samples = inference::SampleSet<f64>;
