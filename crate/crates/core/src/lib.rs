//! Extended Kalman filtering for diffusions with small, state-dependent noise.
//!
//! The crate covers the whole pipeline: dense linear algebra ([`matkit`]),
//! model coefficients ([`models`]), Euler–Maruyama simulation ([`sde`]), the
//! continuous-time EKF ([`ekf`]), stability and assumption diagnostics
//! ([`diagnostics`]) and Monte-Carlo studies of the filter error
//! ([`studies`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod ekf;
pub mod error;
pub mod export;
pub mod matkit;
pub mod models;
pub mod sde;
pub mod studies;

pub use ekf::{filter_run, FilterRun, FilterState, FilterSummary, Linearization, ProjectionEvent};
pub use error::{Error, Result};
pub use matkit::{Mat, SpdMat};
pub use models::{
    linear_model, sis_scaled_model, CubicObservationModel, Dims, InitialCondition, LinearModel,
    ModelCoefficients, SisModel, SisParams,
};
pub use sde::{simulate, simulate_driven, NoiseChannel, SimConfig, Trajectory};
