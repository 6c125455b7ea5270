//! Bias detecting and mitigating Gaussian filtering.
//!
//! Range sensors (and many other instruments) intermittently produce
//! measurements shifted by an unknown additive offset. This crate
//! implements a variational augmentation of unscented Kalman filtering
//! that tracks, per measurement dimension, both the probability that a
//! bias is present and its value, and removes the estimated offset from
//! the innovation. It ships with a maneuvering-target range-only
//! benchmark, the matching posterior Cramér-Rao bounds, and the plain
//! UKF baseline the filter degenerates to when bias detection is
//! disabled.
//!
//! Module map:
//! - [`gaussian`]: beliefs, sigma points, unscented transform, UKF step.
//! - [`bias`]: bias process model and its moment-matched prediction.
//! - [`filter`]: the variational bias detecting and mitigating step.
//! - [`sim`]: coordinated-turn / range-sensor benchmark simulator.
//! - [`pcrb`]: posterior Cramér-Rao bound recursion and estimators.

pub mod bias;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod linalg;
pub mod model;
pub mod pcrb;
pub mod sim;

pub use bias::{BiasBelief, BiasHyperParams};
pub use error::{Error, Result};
pub use filter::{BdmState, VbSettings};
pub use gaussian::{GaussianBelief, SigmaPointConfig};
pub use model::StateSpaceModel;
