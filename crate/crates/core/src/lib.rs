//! Credibility-driven IMM fusion of redundant inertial and GNSS sensors
//! with right-invariant EKF submodels on SE₂(3).

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod credibility;
pub mod error;
pub mod esekf;
pub mod faultlab;
pub mod harness;
pub mod imm;
pub mod ins;
pub mod manifold;
pub mod riekf;
pub mod selection;

pub use credibility::{credibility, CredibilityIndex, SensorKind, SensorSheet};
pub use error::{Error, Result};
pub use imm::{Imm, ImmConfig, TransitionMatrix};
pub use ins::{ImuSample, NavState, NoiseConfig};
pub use manifold::{GroupElement, Rotation};
pub use riekf::{ErrorConvention, FilterState, MeasurementModel};
pub use selection::SensorTree;
