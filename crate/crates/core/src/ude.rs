//! Uncertainty-and-disturbance estimator.
//!
//! Each quadrotor disturbance `delta_j` is split into components parallel
//! and perpendicular to its cable. The perpendicular parts are estimated
//! from quadrotor accelerations; the payload-side resultant
//! `delta_T = delta_p + sum_j delta_par_j` is estimated from the system's
//! translational momentum using velocity feedback only. The estimates are
//! turned into a compensating force per drone.

use serde::{Deserialize, Serialize};

use crate::dynamics::{build_b, cable_vector, translational_momentum, FullState, SystemParams};
use crate::{ControlVec, DistVec, Error, Mat3, Result, Vec2, Vec3, N_DRONES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UdeGains {
    /// Per-drone rates `kappa_j` (1/s).
    pub kappa: [f64; N_DRONES],
    /// Payload-resultant rate `lambda_T` (1/s).
    pub lambda_t: f64,
}

impl Default for UdeGains {
    fn default() -> Self {
        Self { kappa: [5.0; N_DRONES], lambda_t: 5.0 }
    }
}

impl UdeGains {
    pub fn validate(&self) -> Result<()> {
        if self.kappa.iter().chain([&self.lambda_t]).all(|&g| g > 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("UDE gains must be positive".into()))
        }
    }
}

/// Parallel/perpendicular split of a force with respect to a cable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceSplit {
    pub parallel: Vec3,
    pub perpendicular: Vec3,
}

pub fn decompose(delta: &Vec3, l_vec: &Vec3) -> Result<DisturbanceSplit> {
    let l2 = l_vec.norm_squared();
    if !(l2 > 0.0) {
        return Err(Error::ZeroCable);
    }
    let parallel = l_vec * (l_vec.dot(delta) / l2);
    Ok(DisturbanceSplit { parallel, perpendicular: delta - parallel })
}

/// `I - l l^T / l^2`.
pub fn projector_from_cable(l_vec: &Vec3) -> Result<Mat3> {
    let l2 = l_vec.norm_squared();
    if !(l2 > 0.0) {
        return Err(Error::ZeroCable);
    }
    Ok(Mat3::identity() - l_vec * l_vec.transpose() / l2)
}

/// Projector onto the plane normal to the cable with horizontal projection
/// `r`; identical to `B (B^T B)^{-1} B^T`.
pub fn projector(r: &Vec2, l: f64, z_guard: f64) -> Result<Mat3> {
    projector_from_cable(&cable_vector(r, l, z_guard)?)
}

/// `B (B^T B)^{-1} B^T` from its defining formula.
pub fn projector_from_b(r: &Vec2, l: f64, z_guard: f64) -> Result<Mat3> {
    let b = build_b(r, l, z_guard)?;
    let btb_inv = (b.transpose() * b).try_inverse().ok_or(Error::SolveFailure("B^T B is singular"))?;
    Ok(b * btb_inv * b.transpose())
}

/// Ground-truth effective disturbances: `delta_T` and the perpendicular
/// components of the per-drone disturbances.
pub fn effective_disturbances(delta: &DistVec, cables: &[Vec3; N_DRONES]) -> Result<(Vec3, [Vec3; N_DRONES])> {
    let mut delta_t: Vec3 = delta.fixed_rows::<3>(0).into_owned();
    let mut perp = [Vec3::zeros(); N_DRONES];
    for j in 0..N_DRONES {
        let split = decompose(&delta.fixed_rows::<3>(3 + 3 * j).into_owned(), &cables[j])?;
        delta_t += split.parallel;
        perp[j] = split.perpendicular;
    }
    Ok((delta_t, perp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub delta_hat_j: [Vec3; N_DRONES],
    pub delta_hat_t: Vec3,
    /// Running integral subtracted from the momentum to form `delta_hat_T`.
    pub momentum_integral: Vec3,
    pub gains: UdeGains,
}

impl EstimatorState {
    /// Zero estimates, with the integral seeded by the current momentum so
    /// that `delta_hat_T(0) = 0`.
    pub fn new(params: &SystemParams, state: &FullState, gains: UdeGains) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            delta_hat_j: [Vec3::zeros(); N_DRONES],
            delta_hat_t: Vec3::zeros(),
            momentum_integral: translational_momentum(params, state)?,
            gains,
        })
    }

    /// Perpendicular parts of the per-drone estimates for the given cables.
    pub fn delta_hat_perp(&self, cables: &[Vec3; N_DRONES]) -> Result<[Vec3; N_DRONES]> {
        let mut out = [Vec3::zeros(); N_DRONES];
        for j in 0..N_DRONES {
            out[j] = projector_from_cable(&cables[j])? * self.delta_hat_j[j];
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.delta_hat_t.iter().chain(self.momentum_integral.iter()).all(|v| v.is_finite())
            && self.delta_hat_j.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }
}

/// Explicit Euler step of the per-drone law
/// `d/dt delta_hat_j = kappa_j P_j (m_j dv_q/dt - df_L - delta_hat_j)`.
#[allow(clippy::too_many_arguments)]
pub fn update_delta_j(
    est: &mut EstimatorState,
    j: usize,
    v_dot_q: &Vec3,
    delta_f_l: &Vec3,
    r: &Vec2,
    params: &SystemParams,
    dt: f64,
) -> Result<()> {
    check_dt(dt)?;
    let proj = projector(r, params.l, params.z_guard)?;
    let innovation = v_dot_q * params.m_j[j] - delta_f_l - est.delta_hat_j[j];
    est.delta_hat_j[j] += proj * innovation * (dt * est.gains.kappa[j]);
    Ok(())
}

/// Explicit Euler step of the payload-resultant law. `delta_f_l` are the
/// lifts applied over the step; the momentum is read from `state` (the
/// state at the end of the step).
pub fn update_delta_t(
    est: &mut EstimatorState,
    params: &SystemParams,
    state: &FullState,
    delta_f_l: &[Vec3; N_DRONES],
    cables: &[Vec3; N_DRONES],
    dt: f64,
) -> Result<()> {
    check_dt(dt)?;
    let perp = est.delta_hat_perp(cables)?;
    let mut rate = est.delta_hat_t + params.gravity() * params.m_p;
    for j in 0..N_DRONES {
        rate += delta_f_l[j] + perp[j];
    }
    est.momentum_integral += rate * dt;
    est.delta_hat_t = (translational_momentum(params, state)? - est.momentum_integral) * est.gains.lambda_t;
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")))
    }
}

/// Scalar weights `w` with `[n_1 n_2 n_3] w = delta_hat_T`, `n_j = l_j / l`.
pub fn allocation_weights(delta_hat_t: &Vec3, cables: &[Vec3; N_DRONES]) -> Result<Vec3> {
    let mut n = Mat3::zeros();
    for (j, c) in cables.iter().enumerate() {
        let norm = c.norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroCable);
        }
        n.set_column(j, &(c / norm));
    }
    let det = n.determinant();
    if det.abs() < 1e-9 {
        return Err(Error::AllocationSingular { det: det.abs() });
    }
    n.lu().solve(delta_hat_t).ok_or(Error::AllocationSingular { det: det.abs() })
}

/// Compensation force `f_delta_j = -n_j w_j - delta_hat_perp_j`, stacked.
pub fn allocate(est: &EstimatorState, cables: &[Vec3; N_DRONES]) -> Result<ControlVec> {
    let w = allocation_weights(&est.delta_hat_t, cables)?;
    let perp = est.delta_hat_perp(cables)?;
    let mut out = ControlVec::zeros();
    for j in 0..N_DRONES {
        let f = -cables[j].normalize() * w[j] - perp[j];
        out.fixed_rows_mut::<3>(3 * j).copy_from(&f);
    }
    Ok(out)
}

/// Weights of the estimator Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovWeights {
    pub c_t: f64,
    pub c_j: [f64; N_DRONES],
}

impl Default for LyapunovWeights {
    fn default() -> Self {
        Self { c_t: 1.0, c_j: [1.0; N_DRONES] }
    }
}

/// `V_e = c_T/2 |dT~|^2 + 1/2 sum_j (c_T lambda_T N / (2 kappa_j) + c_j / N) |d~_j|^2`.
pub fn lyapunov_ve(est: &EstimatorState, delta_t: &Vec3, delta_j: &[Vec3; N_DRONES], weights: &LyapunovWeights) -> f64 {
    let n = N_DRONES as f64;
    let mut v = 0.5 * weights.c_t * (est.delta_hat_t - delta_t).norm_squared();
    for (j, (hat, d)) in est.delta_hat_j.iter().zip(delta_j).enumerate() {
        let coeff = weights.c_t * est.gains.lambda_t * n / (2.0 * est.gains.kappa[j]) + weights.c_j[j] / n;
        v += 0.5 * coeff * (hat - d).norm_squared();
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{cable_vectors, generalized_acceleration, quad_accelerations, step};
    use crate::math::inf_norm;
    use crate::trajectory::{formation_projections, FormationSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cable(rng: &mut ChaCha8Rng, params: &SystemParams) -> Vec2 {
        let rmax = params.max_projection();
        let rad = rmax * rng.random_range(0.0f64..1.0).sqrt();
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Vec2::new(rad * ang.cos(), rad * ang.sin())
    }

    #[test]
    fn decompose_examples() {
        let l = Vec3::new(0.2, -0.1, 0.95);
        let s = decompose(&(l * 2.0), &l).unwrap();
        assert!((s.parallel - l * 2.0).norm() < 1e-15 && s.perpendicular.norm() < 1e-15);
        let perp = l.cross(&Vec3::x());
        assert!(decompose(&perp, &l).unwrap().parallel.norm() < 1e-15);
        assert!(matches!(decompose(&perp, &Vec3::zeros()), Err(Error::ZeroCable)));
    }

    proptest! {
        #[test]
        fn decompose_recombines_orthogonally(
            d in prop::array::uniform3(-10.0f64..10.0),
            r in prop::array::uniform2(-0.6f64..0.6),
        ) {
            let params = SystemParams::default();
            let l = cable_vector(&Vec2::from(r), params.l, params.z_guard).unwrap();
            let d = Vec3::from(d);
            let s = decompose(&d, &l).unwrap();
            prop_assert!((s.parallel + s.perpendicular - d).norm() < 1e-12);
            prop_assert!(s.parallel.dot(&s.perpendicular).abs() < 1e-12);
            // Lemma: x^T P x = |x_perp|^2.
            let p = projector(&Vec2::from(r), params.l, params.z_guard).unwrap();
            prop_assert!((d.dot(&(p * d)) - s.perpendicular.norm_squared()).abs() < 1e-10);
        }
    }

    #[test]
    fn projector_identities() {
        let params = SystemParams::default();
        let v = projector(&Vec2::zeros(), params.l, params.z_guard).unwrap();
        assert!(inf_norm(&(v - Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)))) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_cable(&mut rng, &params);
            let p = projector(&r, params.l, params.z_guard).unwrap();
            let l = cable_vector(&r, params.l, params.z_guard).unwrap();
            assert!(inf_norm(&(p * p - p)) < 1e-12);
            assert!(inf_norm(&(p - p.transpose())) < 1e-12);
            assert!((p * l).norm() < 1e-12);
            assert!((p.trace() - 2.0).abs() < 1e-12);
            let pb = projector_from_b(&r, params.l, params.z_guard).unwrap();
            assert!(inf_norm(&(p - pb)) < 1e-12);
        }
        let bad = Vec2::new(params.l, 0.0);
        assert!(matches!(projector(&bad, params.l, params.z_guard), Err(Error::GuardViolation { .. })));
    }

    #[test]
    fn disturbance_identity_holds() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let cables =
                [0, 1, 2].map(|_| cable_vector(&random_cable(&mut rng, &params), params.l, params.z_guard).unwrap());
            let delta = DistVec::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let (dt, perp) = effective_disturbances(&delta, &cables).unwrap();
            let mut lhs: Vec3 = delta.fixed_rows::<3>(0).into_owned();
            for j in 0..3 {
                lhs += delta.fixed_rows::<3>(3 + 3 * j);
            }
            let rhs = dt + perp.iter().sum::<Vec3>();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn per_drone_update_fixed_point_and_parallel_invariance() {
        let params = SystemParams::default();
        let state = FullState::new(Vec3::zeros(), [Vec2::new(0.2, 0.1); 3], ControlVec::zeros());
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        let r = Vec2::new(0.2, 0.1);
        let l = cable_vector(&r, params.l, params.z_guard).unwrap();
        // Consistent measurement: m a = f + delta, estimate equals delta.
        let delta = Vec3::new(0.3, -0.2, 0.5);
        let f = Vec3::new(1.0, 2.0, 3.0);
        est.delta_hat_j[0] = delta;
        let acc = (f + delta) / params.m_j[0];
        update_delta_j(&mut est, 0, &acc, &f, &r, &params, 1e-3).unwrap();
        assert!((est.delta_hat_j[0] - delta).norm() < 1e-15);

        // Arbitrary innovation: the parallel part is untouched.
        est.delta_hat_j[1] = Vec3::new(1.0, -1.0, 2.0);
        let before = decompose(&est.delta_hat_j[1], &l).unwrap().parallel;
        update_delta_j(&mut est, 1, &Vec3::new(4.0, 0.5, -3.0), &f, &r, &params, 1e-2).unwrap();
        let after = decompose(&est.delta_hat_j[1], &l).unwrap().parallel;
        assert!((before - after).norm() < 1e-14);
        assert!(update_delta_j(&mut est, 1, &acc, &f, &r, &params, 0.0).is_err());
    }

    #[test]
    fn per_drone_error_decays_exponentially() {
        // Frozen kinematics, constant true disturbance: e(t) = e(0) exp(-kappa t).
        let params = SystemParams::default();
        let state = FullState::new(Vec3::zeros(), [Vec2::zeros(); 3], ControlVec::zeros());
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        let r = Vec2::new(0.25, -0.1);
        let l = cable_vector(&r, params.l, params.z_guard).unwrap();
        let delta = Vec3::new(0.4, 0.3, -0.2);
        let perp_true = decompose(&delta, &l).unwrap().perpendicular;
        let f = Vec3::new(0.0, 0.0, 1.0);
        let tension = l * 3.0;
        let acc = (f + delta + tension) / params.m_j[2];
        let dt = 1e-4;
        let kappa = est.gains.kappa[2];
        for k in 1..=20000 {
            update_delta_j(&mut est, 2, &acc, &f, &r, &params, dt).unwrap();
            if k % 5000 == 0 {
                let t = k as f64 * dt;
                let err = (projector_from_cable(&l).unwrap() * est.delta_hat_j[2] - perp_true).norm();
                let expected = perp_true.norm() * (-kappa * t).exp();
                assert!((err - expected).abs() < 1e-3 * perp_true.norm(), "t={t}: {err} vs {expected}");
            }
        }
    }

    #[test]
    fn resultant_estimate_stays_zero_without_forces() {
        let params = SystemParams { g_i: [0.0; 3], ..Default::default() };
        let state = FullState::new(Vec3::zeros(), [Vec2::new(0.1, 0.0); 3], ControlVec::zeros());
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        let cables = cable_vectors(&params, &state).unwrap();
        for _ in 0..100 {
            update_delta_t(&mut est, &params, &state, &[Vec3::zeros(); 3], &cables, 1e-3).unwrap();
        }
        assert_eq!(est.delta_hat_t, Vec3::zeros());
    }

    #[test]
    fn resultant_error_dynamics_on_frozen_plant() {
        // With the momentum rate supplied by the true model, the estimate
        // obeys d/dt dT^ = -lambda_T (dT~ + sum perp~); check the residual.
        let params = SystemParams::default();
        let projections = formation_projections(&FormationSpec::default()).unwrap();
        let state = FullState::new(Vec3::zeros(), projections, ControlVec::zeros());
        let cables = cable_vectors(&params, &state).unwrap();
        let delta = DistVec::from_fn(|i, _| 0.1 * (i as f64 + 1.0).sin());
        let (delta_t, perp) = effective_disturbances(&delta, &cables).unwrap();
        let zeta = ControlVec::from_fn(|i, _| [0.0, 0.0, 5.0][i % 3]);
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        est.delta_hat_j = [Vec3::new(0.05, 0.0, 0.0), Vec3::zeros(), Vec3::new(0.0, 0.02, 0.0)];
        let perp_hat = est.delta_hat_perp(&cables).unwrap();
        let lifts = [0, 1, 2].map(|j| zeta.fixed_rows::<3>(3 * j).into_owned());
        let mut momentum_rate = delta_t + params.gravity() * params.m_p;
        for j in 0..3 {
            momentum_rate += lifts[j] + perp[j];
        }
        for dt in [1e-3, 1e-4, 1e-5] {
            let mut e = est.clone();
            // Emulate the momentum by shifting the payload velocity.
            let p0 = translational_momentum(&params, &state).unwrap();
            let mut s1 = state;
            s1.0.fixed_rows_mut::<3>(9).copy_from(&(momentum_rate * dt / params.total_mass()));
            let p1 = translational_momentum(&params, &s1).unwrap();
            assert!((p1 - p0 - momentum_rate * dt).norm() < 1e-12);
            let before = e.delta_hat_t;
            update_delta_t(&mut e, &params, &s1, &lifts, &cables, dt).unwrap();
            let rate = (e.delta_hat_t - before) / dt;
            let perp_err: Vec3 = (0..3).map(|j| perp_hat[j] - perp[j]).sum();
            let expected = -(before - delta_t + perp_err) * e.gains.lambda_t;
            assert!((rate - expected).norm() < 1e-6, "dt={dt}: {rate} vs {expected}");
        }
    }

    #[test]
    fn allocation_examples() {
        let params = SystemParams::default();
        let projections = formation_projections(&FormationSpec::default()).unwrap();
        let state = FullState::new(Vec3::zeros(), projections, ControlVec::zeros());
        let cables = cable_vectors(&params, &state).unwrap();
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        assert_eq!(allocate(&est, &cables).unwrap(), ControlVec::zeros());

        let d = 0.9;
        est.delta_hat_t = Vec3::new(0.0, 0.0, d);
        let w = allocation_weights(&est.delta_hat_t, &cables).unwrap();
        let expected = d / (3.0 * FormationSpec::default().theta_z.cos());
        for j in 0..3 {
            assert!((w[j] - expected).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cs = [0, 1, 2].map(|_| {
                let mut r = random_cable(&mut rng, &params);
                r *= 0.5;
                cable_vector(&r, params.l, params.z_guard).unwrap()
            });
            let target = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            if let Ok(w) = allocation_weights(&target, &cs) {
                let recon: Vec3 = (0..3).map(|j| cs[j].normalize() * w[j]).sum();
                assert!((recon - target).norm() < 1e-10);
            }
        }

        let vertical = [Vec3::new(0.0, 0.0, params.l); 3];
        assert!(matches!(allocate(&est, &vertical), Err(Error::AllocationSingular { .. })));
    }

    #[test]
    fn compensation_cancels_resultant_at_convergence() {
        // Payload translation: sum_j f_delta_j + delta_T + sum_j delta_perp_j = 0.
        let params = SystemParams::default();
        let projections = formation_projections(&FormationSpec::default()).unwrap();
        let state = FullState::new(Vec3::zeros(), projections, ControlVec::zeros());
        let cables = cable_vectors(&params, &state).unwrap();
        let delta = DistVec::from_fn(|i, _| 0.2 * (i as f64 * 1.7).cos());
        let (delta_t, perp) = effective_disturbances(&delta, &cables).unwrap();
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        est.delta_hat_t = delta_t;
        est.delta_hat_j = perp;
        let f = allocate(&est, &cables).unwrap();
        let mut total = delta_t + perp.iter().sum::<Vec3>();
        for j in 0..3 {
            total += f.fixed_rows::<3>(3 * j);
        }
        assert!(total.norm() < 1e-12);
    }

    #[test]
    fn open_loop_estimates_converge_and_ve_decreases() {
        // Plant under constant lifts and a constant disturbance; the
        // estimator reads quadrotor accelerations from the model.
        let params = SystemParams::default();
        let projections = formation_projections(&FormationSpec::default()).unwrap();
        let mut state = FullState::new(Vec3::zeros(), projections, ControlVec::zeros());
        let mut est = EstimatorState::new(&params, &state, UdeGains::default()).unwrap();
        let hover = crate::trajectory::Reference::new(
            &params,
            &FormationSpec::default(),
            &crate::trajectory::Figure8Config { a_x: 0.0, a_y: 0.0, ..Default::default() },
        )
        .unwrap()
        .sample(0.0)
        .unwrap()
        .k_star;
        let delta = DistVec::from_fn(|i, _| if i < 3 { 0.1 } else { 0.05 * ((i % 3) as f64 - 1.0) });
        let dt = 1e-3;
        let weights = LyapunovWeights::default();
        let mut last_ve = f64::INFINITY;
        for k in 0..3000 {
            let cables = cable_vectors(&params, &state).unwrap();
            let (delta_t, _) = effective_disturbances(&delta, &cables).unwrap();
            let dj = [0, 1, 2].map(|j| delta.fixed_rows::<3>(3 + 3 * j).into_owned());
            let ve = lyapunov_ve(&est, &delta_t, &dj, &weights);
            if k > 0 {
                assert!(ve <= last_ve * (1.0 + 1e-6) + 1e-12, "step {k}: {ve} > {last_ve}");
            }
            last_ve = ve;
            let u_dot = generalized_acceleration(&params, &state, &hover, &delta).unwrap();
            let acc = quad_accelerations(&params, &state, &u_dot).unwrap();
            let lifts = [0, 1, 2].map(|j| hover.fixed_rows::<3>(3 * j).into_owned());
            for j in 0..3 {
                update_delta_j(&mut est, j, &acc[j], &lifts[j], &state.cable_projection(j), &params, dt).unwrap();
            }
            state = step(&params, &state, &hover, &delta, dt).unwrap();
            let cables = cable_vectors(&params, &state).unwrap();
            update_delta_t(&mut est, &params, &state, &lifts, &cables, dt).unwrap();
        }
        let cables = cable_vectors(&params, &state).unwrap();
        let (delta_t, perp) = effective_disturbances(&delta, &cables).unwrap();
        assert!((est.delta_hat_t - delta_t).norm() < 1e-2, "{} vs {}", est.delta_hat_t, delta_t);
        let perp_hat = est.delta_hat_perp(&cables).unwrap();
        for j in 0..3 {
            assert!((perp_hat[j] - perp[j]).norm() < 1e-2);
        }
    }
}
