//! Range-based 3D relative pose estimation for multi-robot systems.
//!
//! Robots carrying two ranging tags each measure inter-tag distances and
//! their own body-frame velocities. This crate estimates the SE(3) relative
//! poses of all robots with respect to a reference robot:
//!
//! - [`liegroup`]: SO(n)/SE(n) primitives (exp/log, wedge/vee, adjoint).
//! - [`models`]: process / range measurement models and analytic Jacobians.
//! - [`ambiguity`]: closed-form enumeration of the discrete planar pose
//!   ambiguities consistent with a set of static range measurements.
//! - [`gils`]: geometrically-initialized least squares that refines the
//!   ambiguities into a Gaussian mixture.
//! - [`filters`]: Gaussian-sum filter, single-mode EKF, and a bootstrap
//!   particle filter baseline.
//! - [`sim`]: synthetic scenario generation and Monte-Carlo evaluation
//!   (RMSE, NEES, runtime).
//! - [`config`], [`logio`], [`report`], [`cli`]: configuration, CSV log
//!   replay, and report emission behind the `relpose` binary.

pub mod ambiguity;
pub mod cli;
pub mod config;
pub mod error;
pub mod filters;
pub mod gils;
pub mod liegroup;
pub mod logio;
pub mod models;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
pub use liegroup::{Pose, Rotation};
pub use models::{MeasurementGraph, RelativeState, RobotGeometry};
