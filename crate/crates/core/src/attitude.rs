//! Per-drone attitude loop: desired attitude from a commanded lift, the
//! almost-globally stable torque law, rigid-body integration and the lift
//! the drone actually delivers.
//!
//! `R` maps body coordinates to inertial ones, so `R e3` is the thrust axis
//! in the inertial frame and `Ṙ = R ω^×` with `ω` in the body frame.

use serde::{Deserialize, Serialize};

use crate::math::{hat, rotation_angle, vee};
use crate::{Error, Mat3, Result, Vec3};

/// Smallest commanded lift norm accepted by [`extract_attitude`] (N).
pub const MIN_FORCE: f64 = 1e-9;
/// Smallest admissible vertical component of the commanded thrust axis.
pub const MIN_NZ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorState {
    pub r: Mat3,
    pub omega: Vec3,
}

impl RotorState {
    pub fn level() -> Self {
        Self { r: Mat3::identity(), omega: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttitudeGains {
    pub b_omega: f64,
    pub b_r: f64,
    /// Inertia matrix, row-major.
    pub inertia: [[f64; 3]; 3],
    /// Time constant of the low-pass filter on the feedforward angular
    /// acceleration (s); 0 disables it.
    pub accel_filter_tau: f64,
    pub yaw: f64,
}

impl Default for AttitudeGains {
    fn default() -> Self {
        Self {
            b_omega: 0.5,
            b_r: 2.0,
            inertia: [[0.02, 0.0, 0.0], [0.0, 0.02, 0.0], [0.0, 0.0, 0.04]],
            accel_filter_tau: 0.02,
            yaw: 0.0,
        }
    }
}

impl AttitudeGains {
    pub fn j(&self) -> Mat3 {
        let i = &self.inertia;
        Mat3::new(i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.b_omega > 0.0 && self.b_r > 0.0) {
            return bad("attitude gains must be positive");
        }
        if !(self.accel_filter_tau >= 0.0) || !self.yaw.is_finite() {
            return bad("accel_filter_tau must be non-negative and yaw finite");
        }
        let j = self.j();
        if (j - j.transpose()).abs().max() > 1e-12 || j.cholesky().is_none() {
            return bad("inertia must be symmetric positive definite");
        }
        Ok(())
    }
}

/// Desired attitude whose third column is the commanded thrust axis and
/// whose first column has heading `psi`.
pub fn extract_attitude(f_lc: &Vec3, psi: f64) -> Result<Mat3> {
    let f = f_lc.norm();
    if !(f >= MIN_FORCE) {
        return Err(Error::DegenerateForce("commanded lift vanishes"));
    }
    let nz = f_lc / f;
    if nz.z.abs() < MIN_NZ {
        return Err(Error::DegenerateForce("commanded lift is horizontal"));
    }
    let (s, c) = psi.sin_cos();
    let nx_tilde = Vec3::new(c, s, -(c * nz.x + s * nz.y) / nz.z);
    let nx = nx_tilde.normalize();
    let ny_raw = nz.cross(&nx);
    let ny = ny_raw / ny_raw.norm();
    Ok(Mat3::from_columns(&[nx, ny, nz]))
}

/// Desired body rate and its derivative at the middle of three desired
/// attitudes spaced by `dt` (central differences).
pub fn desired_rates(r_prev: &Mat3, r_mid: &Mat3, r_next: &Mat3, dt: f64) -> (Vec3, Vec3) {
    let rdot = (r_next - r_prev) / (2.0 * dt);
    let rddot = (r_next - 2.0 * r_mid + r_prev) / (dt * dt);
    // R^T R̈ = ω̇^× + (ω^×)², whose skew part is ω̇^×.
    (vee_skew(&(r_mid.transpose() * rdot)), vee_skew(&(r_mid.transpose() * rddot)))
}

fn vee_skew(a: &Mat3) -> Vec3 {
    vee(&((a - a.transpose()) * 0.5))
}

/// Attitude error vector `Σ e_i × R̃ e_i`.
pub fn attitude_error(r_tilde: &Mat3) -> Vec3 {
    (0..3)
        .map(|i| {
            let e = Vec3::ith(i, 1.0);
            e.cross(&(r_tilde * e))
        })
        .sum()
}

/// Tracking errors `(R̃, ω̃)` with `R̃ = R_dᵀR` and `ω̃ = ω - R̃ᵀω_d`.
pub fn tracking_errors(state: &RotorState, r_d: &Mat3, omega_d: &Vec3) -> (Mat3, Vec3) {
    let r_tilde = r_d.transpose() * state.r;
    (r_tilde, state.omega - r_tilde.transpose() * omega_d)
}

pub fn torque(gains: &AttitudeGains, state: &RotorState, r_d: &Mat3, omega_d: &Vec3, omega_dot_d: &Vec3) -> Vec3 {
    let j = gains.j();
    let (r_tilde, w_tilde) = tracking_errors(state, r_d, omega_d);
    let w = state.omega;
    -gains.b_omega * w_tilde - gains.b_r * attitude_error(&r_tilde) - w_tilde.cross(&(j * w_tilde)) + w.cross(&(j * w))
        - j * (w_tilde.cross(&(r_tilde.transpose() * omega_d)) - r_tilde.transpose() * omega_dot_d)
}

/// Geodesic distance between the attitude and the desired attitude (rad).
pub fn geodesic_error(r: &Mat3, r_d: &Mat3) -> f64 {
    rotation_angle(&(r_d.transpose() * r))
}

fn rigid_body_rates(j: &Mat3, j_inv: &Mat3, r: &Mat3, w: &Vec3, tau: &Vec3) -> (Mat3, Vec3) {
    (r * hat(w), j_inv * (tau - w.cross(&(j * w))))
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// One RK4 step of the rigid-body equations with the torque held constant,
/// followed by projection back onto SO(3).
pub fn rot_step(gains: &AttitudeGains, state: &RotorState, tau: &Vec3, dt: f64) -> RotorState {
    let j = gains.j();
    let j_inv = j.try_inverse().expect("inertia validated as positive definite");
    let f = |r: &Mat3, w: &Vec3| rigid_body_rates(&j, &j_inv, r, w, tau);
    let (r0, w0) = (state.r, state.omega);
    let (k1r, k1w) = f(&r0, &w0);
    let (k2r, k2w) = f(&(r0 + k1r * (dt / 2.0)), &(w0 + k1w * (dt / 2.0)));
    let (k3r, k3w) = f(&(r0 + k2r * (dt / 2.0)), &(w0 + k2w * (dt / 2.0)));
    let (k4r, k4w) = f(&(r0 + k3r * dt), &(w0 + k3w * dt));
    let r = r0 + (k1r + 2.0 * k2r + 2.0 * k3r + k4r) * (dt / 6.0);
    let omega = w0 + (k1w + 2.0 * k2w + 2.0 * k3w + k4w) * (dt / 6.0);
    RotorState { r: orthonormalize(&r), omega }
}

/// Lift delivered into the weight-compensated control channel:
/// `R e3 f + m g`.
pub fn realized_lift(state: &RotorState, f_total: f64, mass: f64, gravity: &Vec3) -> Vec3 {
    state.r.column(2) * f_total + gravity * mass
}

/// Commanded total lift for a compensated-channel command `ζ_c,j`.
pub fn commanded_lift(zeta_c: &Vec3, mass: f64, gravity: &Vec3) -> Vec3 {
    zeta_c - gravity * mass
}

/// Causal inner loop for one drone: keeps the last two desired attitudes so
/// that the rates are central differences lagged by one step.
#[derive(Debug, Clone)]
pub struct AttitudeTracker {
    pub gains: AttitudeGains,
    pub state: RotorState,
    history: Vec<Mat3>,
    omega_dot_filtered: Vec3,
}

/// Quantities produced by one inner-loop update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeStep {
    pub r_d: Mat3,
    pub omega_d: Vec3,
    pub omega_dot_d: Vec3,
    pub tau: Vec3,
    pub thrust: f64,
    pub geodesic_error: f64,
    pub omega_tilde: Vec3,
}

impl AttitudeTracker {
    pub fn new(gains: AttitudeGains, state: RotorState) -> Result<Self> {
        gains.validate()?;
        Ok(Self { gains, state, history: Vec::with_capacity(3), omega_dot_filtered: Vec3::zeros() })
    }

    /// Starts already aligned with the attitude that realizes `f_lc`.
    pub fn aligned(gains: AttitudeGains, f_lc: &Vec3) -> Result<Self> {
        let r = extract_attitude(f_lc, gains.yaw)?;
        Self::new(gains, RotorState { r, omega: Vec3::zeros() })
    }

    /// Computes the torque for commanded lift `f_lc`, integrates the
    /// rotational dynamics over `dt` and returns the step diagnostics. The
    /// returned thrust is `||f_lc||` and should be combined with the
    /// post-step attitude.
    pub fn step(&mut self, f_lc: &Vec3, dt: f64) -> Result<AttitudeStep> {
        let r_new = extract_attitude(f_lc, self.gains.yaw)?;
        if self.history.len() == 3 {
            self.history.remove(0);
        }
        self.history.push(r_new);
        let (r_d, omega_d, raw_dot) = match self.history.as_slice() {
            [a, b, c] => {
                let (w, wd) = desired_rates(a, b, c, dt);
                (*c, w, wd)
            }
            [a, b] => {
                let w = vee_skew(&(b.transpose() * (b - a) / dt));
                (*b, w, Vec3::zeros())
            }
            _ => (r_new, Vec3::zeros(), Vec3::zeros()),
        };
        let tau_f = self.gains.accel_filter_tau;
        self.omega_dot_filtered = if tau_f > 0.0 {
            let alpha = dt / (tau_f + dt);
            self.omega_dot_filtered + alpha * (raw_dot - self.omega_dot_filtered)
        } else {
            raw_dot
        };
        let omega_dot_d = self.omega_dot_filtered;
        let tau = torque(&self.gains, &self.state, &r_d, &omega_d, &omega_dot_d);
        let (_, omega_tilde) = tracking_errors(&self.state, &r_d, &omega_d);
        let geodesic = geodesic_error(&self.state.r, &r_d);
        self.state = rot_step(&self.gains, &self.state, &tau, dt);
        Ok(AttitudeStep { r_d, omega_d, omega_dot_d, tau, thrust: f_lc.norm(), geodesic_error: geodesic, omega_tilde })
    }
}
