//! Simulation and control synthesis for a point-mass payload slung beneath
//! three quadrotors on rigid cables.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: generalized-coordinate equations of motion, the
//!   control-affine form and a fixed-step RK4 integrator.
//! - [`trajectory`]: figure-8 payload reference, rigid formation and
//!   inverse-dynamics feedforward.
//! - [`neural_ccm`]: the neural dual metric, the bounded neural controller,
//!   contraction / dual-condition losses, training and verification.
//! - [`ude`]: uncertainty-and-disturbance estimator and compensation
//!   allocation.
//! - [`attitude`]: per-drone SO(3) attitude tracking inner loop.
//! - [`simulator`]: closed-loop orchestration, disturbance injection,
//!   logging and metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attitude;
pub mod dynamics;
mod error;
pub mod math;
pub mod neural_ccm;
pub mod simulator;
pub mod trajectory;
pub mod ude;

pub use error::{Error, Result};

pub use dynamics::{AffineFields, FullState, SystemMatrices, SystemParams};
pub use neural_ccm::{CertificatePair, TrainConfig, VerificationReport};
pub use simulator::{Metrics, ScenarioConfig, SimLog};
pub use trajectory::{FormationSpec, ReferenceSample};
pub use ude::EstimatorState;

/// Dimension of the full state `[x_p, r_1, r_2, r_3, u]`.
pub const STATE_DIM: usize = 18;
/// Number of generalized speeds (and of control inputs).
pub const DOF: usize = 9;
/// Dimension of the disturbance vector `[delta_p, delta_1, delta_2, delta_3]`.
pub const DIST_DIM: usize = 12;
/// Number of quadrotors.
pub const N_DRONES: usize = 3;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type StateVec = nalgebra::SVector<f64, STATE_DIM>;
pub type StateMat = nalgebra::SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type ControlVec = nalgebra::SVector<f64, DOF>;
pub type DistVec = nalgebra::SVector<f64, DIST_DIM>;
