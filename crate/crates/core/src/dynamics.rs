//! Equations of motion of the slung-payload system in generalized speeds
//! `u = [v_p, v_1, v_2, v_3]`:
//!
//! ```text
//! M(r) u' + C(r, v) u = f_gp + H(r) zeta + H_delta(r) delta
//! x_p' = v_p,   r_j' = v_j
//! ```
//!
//! Quadrotor weight is assumed pre-compensated, so `zeta_j` is the lift in
//! excess of `-m_j g` and only payload gravity appears in `f_gp`. The
//! inertial z-axis points up and every cable vector has a positive z
//! component (drones above the payload).

use nalgebra::{Cholesky, SMatrix, SVector, Vector2, LU};
use serde::{Deserialize, Serialize};

use crate::{ControlVec, DistVec, Error, Result, StateMat, StateVec, Vec2, Vec3, DOF, N_DRONES};

pub type Mat9 = SMatrix<f64, DOF, DOF>;
pub type Vec9 = SVector<f64, DOF>;
pub type Mat32 = SMatrix<f64, 3, 2>;
pub type Mat2 = nalgebra::Matrix2<f64>;
pub type ControlField = SMatrix<f64, 18, DOF>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Payload mass (kg).
    pub m_p: f64,
    /// Quadrotor masses (kg).
    pub m_j: [f64; N_DRONES],
    /// Cable length (m).
    pub l: f64,
    /// Gravity in the inertial frame (m/s^2).
    pub g_i: [f64; 3],
    /// Minimum admissible cable height `z_j` (m).
    pub z_guard: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { m_p: 1.3, m_j: [1.5; N_DRONES], l: 0.98, g_i: [0.0, 0.0, -9.81], z_guard: 0.05 }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.m_p > 0.0) {
            return bad("payload mass must be positive");
        }
        if self.m_j.iter().any(|&m| !(m > 0.0)) {
            return bad("drone masses must be positive");
        }
        if !(self.l > 0.0) {
            return bad("cable length must be positive");
        }
        if !(self.z_guard > 0.0 && self.z_guard < self.l) {
            return bad("z_guard must lie in (0, l)");
        }
        if self.g_i.iter().any(|g| !g.is_finite()) {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.g_i)
    }

    pub fn total_mass(&self) -> f64 {
        self.m_p + self.m_j.iter().sum::<f64>()
    }

    /// Largest admissible horizontal cable projection `l - z_guard`.
    pub fn max_projection(&self) -> f64 {
        self.l - self.z_guard
    }
}

/// Full 18-dimensional state `[x_p(3), r_1(2), r_2(2), r_3(2), u(9)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState(pub StateVec);

impl FullState {
    pub fn new(x_p: Vec3, r: [Vec2; N_DRONES], u: ControlVec) -> Self {
        let mut v = StateVec::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&x_p);
        for (j, rj) in r.iter().enumerate() {
            v.fixed_rows_mut::<2>(3 + 2 * j).copy_from(rj);
        }
        v.fixed_rows_mut::<9>(9).copy_from(&u);
        Self(v)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 18 {
            return Err(Error::InvalidConfig(format!("state needs 18 values, got {}", values.len())));
        }
        Ok(Self(StateVec::from_column_slice(values)))
    }

    pub fn as_vector(&self) -> &StateVec {
        &self.0
    }

    pub fn payload_position(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn cable_projection(&self, j: usize) -> Vec2 {
        self.0.fixed_rows::<2>(3 + 2 * j).into_owned()
    }

    pub fn u(&self) -> ControlVec {
        self.0.fixed_rows::<9>(9).into_owned()
    }

    pub fn payload_velocity(&self) -> Vec3 {
        self.0.fixed_rows::<3>(9).into_owned()
    }

    pub fn cable_rate(&self, j: usize) -> Vec2 {
        self.0.fixed_rows::<2>(12 + 2 * j).into_owned()
    }

    pub fn check_guard(&self, params: &SystemParams) -> Result<()> {
        for j in 0..N_DRONES {
            guarded_z(j, &self.cable_projection(j), params.l, params.z_guard)?;
        }
        Ok(())
    }
}

fn guarded_z(cable: usize, r: &Vec2, l: f64, z_guard: f64) -> Result<f64> {
    let norm = r.norm();
    let limit = l - z_guard;
    if !(norm <= limit) {
        return Err(Error::GuardViolation { cable, norm, limit });
    }
    Ok((l * l - r.norm_squared()).sqrt())
}

/// Vertical cable component `z = sqrt(l^2 - r^T r)`.
pub fn cable_z(r: &Vec2, l: f64, z_guard: f64) -> Result<f64> {
    guarded_z(0, r, l, z_guard)
}

/// Payload-to-drone cable vector `[r; z]`.
pub fn cable_vector(r: &Vec2, l: f64, z_guard: f64) -> Result<Vec3> {
    let z = cable_z(r, l, z_guard)?;
    Ok(Vec3::new(r.x, r.y, z))
}

fn b_from(r: &Vec2, z: f64) -> Mat32 {
    Mat32::new(1.0, 0.0, 0.0, 1.0, -r.x / z, -r.y / z)
}

fn bdot_from(r: &Vec2, v: &Vec2, z: f64) -> Mat32 {
    let zdot = -r.dot(v) / z;
    let row = -(v * z - r * zdot) / (z * z);
    Mat32::new(0.0, 0.0, 0.0, 0.0, row.x, row.y)
}

/// Maps cable projection rates to cable vector rates: `l' = B v`.
pub fn build_b(r: &Vec2, l: f64, z_guard: f64) -> Result<Mat32> {
    let z = cable_z(r, l, z_guard)?;
    Ok(b_from(r, z))
}

/// Time derivative of [`build_b`] along `r' = v`.
pub fn build_bdot(r: &Vec2, v: &Vec2, l: f64, z_guard: f64) -> Result<Mat32> {
    let z = cable_z(r, l, z_guard)?;
    Ok(bdot_from(r, v, z))
}

/// Per-cable quantities evaluated once per state.
#[derive(Debug, Clone, Copy)]
struct Cable {
    r: Vec2,
    v: Vec2,
    z: f64,
    b: Mat32,
    bdot: Mat32,
}

impl Cable {
    fn of(params: &SystemParams, state: &FullState, j: usize) -> Result<Self> {
        let r = state.cable_projection(j);
        let v = state.cable_rate(j);
        let z = guarded_z(j, &r, params.l, params.z_guard)?;
        Ok(Self { r, v, z, b: b_from(&r, z), bdot: bdot_from(&r, &v, z) })
    }

    fn cables(params: &SystemParams, state: &FullState) -> Result<[Self; N_DRONES]> {
        Ok([Self::of(params, state, 0)?, Self::of(params, state, 1)?, Self::of(params, state, 2)?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub m: Mat9,
    pub c: Mat9,
    pub f_gp: Vec9,
    pub h: Mat9,
    pub h_delta: SMatrix<f64, DOF, 12>,
}

pub fn assemble(params: &SystemParams, state: &FullState) -> Result<SystemMatrices> {
    let cables = Cable::cables(params, state)?;
    Ok(assemble_from(params, &cables))
}

fn assemble_from(params: &SystemParams, cables: &[Cable; N_DRONES]) -> SystemMatrices {
    let mut m = Mat9::zeros();
    let mut c = Mat9::zeros();
    let mut h = Mat9::zeros();
    let mut h_delta = SMatrix::<f64, DOF, 12>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(params.total_mass());
    h_delta.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(1.0);
    for (j, cab) in cables.iter().enumerate() {
        let mj = params.m_j[j];
        let col = 3 + 2 * j;
        let mb = cab.b * mj;
        m.fixed_view_mut::<3, 2>(0, col).copy_from(&mb);
        m.fixed_view_mut::<2, 3>(col, 0).copy_from(&mb.transpose());
        m.fixed_view_mut::<2, 2>(col, col).copy_from(&(cab.b.transpose() * cab.b * mj));
        c.fixed_view_mut::<3, 2>(0, col).copy_from(&(cab.bdot * mj));
        c.fixed_view_mut::<2, 2>(col, col).copy_from(&(cab.b.transpose() * cab.bdot * mj));
        h.fixed_view_mut::<3, 3>(0, 3 * j).fill_diagonal(1.0);
        h.fixed_view_mut::<2, 3>(col, 3 * j).copy_from(&cab.b.transpose());
        h_delta.fixed_view_mut::<3, 3>(0, 3 + 3 * j).fill_diagonal(1.0);
        h_delta.fixed_view_mut::<2, 3>(col, 3 + 3 * j).copy_from(&cab.b.transpose());
    }
    let mut f_gp = Vec9::zeros();
    f_gp.fixed_rows_mut::<3>(0).copy_from(&(params.gravity() * params.m_p));
    SystemMatrices { m, c, f_gp, h, h_delta }
}

/// Factorization of the 9x9 mass matrix: Cholesky, falling back to LU.
enum MassSolver {
    Cholesky(Cholesky<f64, nalgebra::Const<DOF>>),
    Lu(LU<f64, nalgebra::Const<DOF>, nalgebra::Const<DOF>>),
}

impl MassSolver {
    fn new(m: &Mat9) -> Result<Self> {
        if let Some(ch) = Cholesky::new(*m) {
            return Ok(Self::Cholesky(ch));
        }
        let lu = LU::new(*m);
        if lu.is_invertible() {
            Ok(Self::Lu(lu))
        } else {
            Err(Error::SolveFailure("mass matrix is singular"))
        }
    }

    fn solve<const C: usize>(&self, rhs: &SMatrix<f64, DOF, C>) -> Result<SMatrix<f64, DOF, C>> {
        let out = match self {
            Self::Cholesky(ch) => ch.solve(rhs),
            Self::Lu(lu) => lu.solve(rhs).ok_or(Error::SolveFailure("mass matrix is singular"))?,
        };
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::SolveFailure("non-finite solution of mass-matrix system"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineFields {
    pub f: StateVec,
    pub g: ControlField,
    pub g_delta: SMatrix<f64, 18, 12>,
}

impl AffineFields {
    /// `f + G zeta + G_delta delta`.
    pub fn evaluate(&self, zeta: &ControlVec, delta: &DistVec) -> StateVec {
        self.f + self.g * zeta + self.g_delta * delta
    }
}

pub fn affine_fields(params: &SystemParams, state: &FullState) -> Result<AffineFields> {
    let sm = assemble(params, state)?;
    let solver = MassSolver::new(&sm.m)?;
    let u = state.u();
    let acc = solver.solve(&(sm.f_gp - sm.c * u))?;
    let gm = solver.solve(&sm.h)?;
    let gd = solver.solve(&sm.h_delta)?;
    let mut f = StateVec::zeros();
    f.fixed_rows_mut::<9>(0).copy_from(&u);
    f.fixed_rows_mut::<9>(9).copy_from(&acc);
    let mut g = ControlField::zeros();
    g.fixed_view_mut::<9, 9>(9, 0).copy_from(&gm);
    let mut g_delta = SMatrix::<f64, 18, 12>::zeros();
    g_delta.fixed_view_mut::<9, 12>(9, 0).copy_from(&gd);
    Ok(AffineFields { f, g, g_delta })
}

/// Generalized acceleration `u'` under the given inputs.
pub fn generalized_acceleration(
    params: &SystemParams,
    state: &FullState,
    zeta: &ControlVec,
    delta: &DistVec,
) -> Result<Vec9> {
    let sm = assemble(params, state)?;
    let rhs = sm.f_gp - sm.c * state.u() + sm.h * zeta + sm.h_delta * delta;
    MassSolver::new(&sm.m)?.solve(&rhs)
}

/// Right-hand side of the closed system `x' = f + G zeta + G_delta delta`.
pub fn state_derivative(
    params: &SystemParams,
    state: &FullState,
    zeta: &ControlVec,
    delta: &DistVec,
) -> Result<StateVec> {
    let acc = generalized_acceleration(params, state, zeta, delta)?;
    let mut dx = StateVec::zeros();
    dx.fixed_rows_mut::<9>(0).copy_from(&state.u());
    dx.fixed_rows_mut::<9>(9).copy_from(&acc);
    Ok(dx)
}

/// One classical RK4 step with `zeta` and `delta` held over the step.
pub fn step(
    params: &SystemParams,
    state: &FullState,
    zeta: &ControlVec,
    delta: &DistVec,
    dt: f64,
) -> Result<FullState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let x = state.0;
    let k1 = state_derivative(params, state, zeta, delta)?;
    let k2 = state_derivative(params, &FullState(x + k1 * (0.5 * dt)), zeta, delta)?;
    let k3 = state_derivative(params, &FullState(x + k2 * (0.5 * dt)), zeta, delta)?;
    let k4 = state_derivative(params, &FullState(x + k3 * dt), zeta, delta)?;
    let next = FullState(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    next.check_guard(params)?;
    Ok(next)
}

/// Quadrotor positions `x_p + l_j`.
pub fn quad_positions(params: &SystemParams, state: &FullState) -> Result<[Vec3; N_DRONES]> {
    let xp = state.payload_position();
    let mut out = [Vec3::zeros(); N_DRONES];
    for (j, q) in out.iter_mut().enumerate() {
        let r = state.cable_projection(j);
        let z = guarded_z(j, &r, params.l, params.z_guard)?;
        *q = xp + Vec3::new(r.x, r.y, z);
    }
    Ok(out)
}

/// Quadrotor inertial velocities `v_p + B_j v_j`.
pub fn quad_velocities(params: &SystemParams, state: &FullState) -> Result<[Vec3; N_DRONES]> {
    let cables = Cable::cables(params, state)?;
    let vp = state.payload_velocity();
    Ok(cables.map(|c| vp + c.b * c.v))
}

/// Quadrotor inertial accelerations `v_p' + B_j v_j' + B_j' v_j` for a given
/// generalized acceleration.
pub fn quad_accelerations(params: &SystemParams, state: &FullState, u_dot: &Vec9) -> Result<[Vec3; N_DRONES]> {
    let cables = Cable::cables(params, state)?;
    let ap = u_dot.fixed_rows::<3>(0).into_owned();
    let mut out = [Vec3::zeros(); N_DRONES];
    for (j, c) in cables.iter().enumerate() {
        let vj_dot: Vector2<f64> = u_dot.fixed_rows::<2>(3 + 2 * j).into_owned();
        out[j] = ap + c.b * vj_dot + c.bdot * c.v;
    }
    Ok(out)
}

/// Cable vectors `l_j` of a state.
pub fn cable_vectors(params: &SystemParams, state: &FullState) -> Result<[Vec3; N_DRONES]> {
    let cables = Cable::cables(params, state)?;
    Ok(cables.map(|c| Vec3::new(c.r.x, c.r.y, c.z)))
}

/// Generalized momentum of the payload translation `m_t v_p + sum_j m_j B_j v_j`.
pub fn translational_momentum(params: &SystemParams, state: &FullState) -> Result<Vec3> {
    let cables = Cable::cables(params, state)?;
    let mut p = state.payload_velocity() * params.total_mass();
    for (j, c) in cables.iter().enumerate() {
        p += c.b * c.v * params.m_j[j];
    }
    Ok(p)
}

/// Kinetic energy plus payload potential energy (drone weight is compensated).
pub fn mechanical_energy(params: &SystemParams, state: &FullState) -> Result<f64> {
    let sm = assemble(params, state)?;
    let u = state.u();
    let kinetic = 0.5 * u.dot(&(sm.m * u));
    let potential = -params.m_p * params.gravity().dot(&state.payload_position());
    Ok(kinetic + potential)
}

/// State Jacobians of the drift and of every control column.
#[derive(Debug, Clone)]
pub struct PlantJacobians {
    pub f: StateVec,
    pub g: ControlField,
    /// `df/dx`.
    pub df: StateMat,
    /// `dG/dx_k` for every state coordinate `k`; column `i` of entry `k` is
    /// column `k` of `dg_i/dx`.
    pub dg: [ControlField; 18],
}

impl PlantJacobians {
    /// `A = df/dx + sum_i dg_i/dx zeta_i`.
    pub fn jacobian_a(&self, zeta: &ControlVec) -> StateMat {
        let mut a = self.df;
        for (k, dgk) in self.dg.iter().enumerate() {
            let col = dgk * zeta;
            let mut dst = a.column_mut(k);
            dst += col;
        }
        a
    }

    /// Dense `dg_i/dx` for one control column.
    pub fn dg_column(&self, i: usize) -> StateMat {
        let mut out = StateMat::zeros();
        for (k, dgk) in self.dg.iter().enumerate() {
            out.set_column(k, &dgk.column(i));
        }
        out
    }
}

/// Analytic state Jacobians of `f` and `G`.
///
/// Only the cable projections enter `M`, `H`, and only `(r_j, v_j)` enter
/// `C u = [sum_j m_j q_j e_3; -m_j q_j r_j / z_j]` with
/// `q_j = -(v_j^T v_j / z_j + (r_j^T v_j)^2 / z_j^3)`.
pub fn plant_jacobians(params: &SystemParams, state: &FullState) -> Result<PlantJacobians> {
    let cables = Cable::cables(params, state)?;
    let sm = assemble_from(params, &cables);
    let solver = MassSolver::new(&sm.m)?;
    let u = state.u();
    let acc = solver.solve(&(sm.f_gp - sm.c * u))?;
    let gm = solver.solve(&sm.h)?;

    let mut f = StateVec::zeros();
    f.fixed_rows_mut::<9>(0).copy_from(&u);
    f.fixed_rows_mut::<9>(9).copy_from(&acc);
    let mut g = ControlField::zeros();
    g.fixed_view_mut::<9, 9>(9, 0).copy_from(&gm);

    let mut df = StateMat::zeros();
    df.fixed_view_mut::<9, 9>(0, 9).fill_diagonal(1.0);
    let mut dg = [ControlField::zeros(); 18];

    for (j, cab) in cables.iter().enumerate() {
        let mj = params.m_j[j];
        let col = 3 + 2 * j;
        let (r, v, z) = (cab.r, cab.v, cab.z);
        let z3 = z * z * z;
        let z5 = z3 * z * z;
        let s = r.dot(&v);
        let vv = v.norm_squared();
        let q = -(vv / z + s * s / z3);
        for a in 0..2 {
            // derivative along r_{j,a}
            let ea = if a == 0 { Vec2::new(1.0, 0.0) } else { Vec2::new(0.0, 1.0) };
            let drow = -(ea / z + r * (r[a] / z3));
            let e = Mat32::new(0.0, 0.0, 0.0, 0.0, drow.x, drow.y);
            let mut dm = Mat9::zeros();
            dm.fixed_view_mut::<3, 2>(0, col).copy_from(&(e * mj));
            dm.fixed_view_mut::<2, 3>(col, 0).copy_from(&(e.transpose() * mj));
            dm.fixed_view_mut::<2, 2>(col, col).copy_from(&((e.transpose() * cab.b + cab.b.transpose() * e) * mj));
            let mut dh = Mat9::zeros();
            dh.fixed_view_mut::<2, 3>(col, 3 * j).copy_from(&e.transpose());

            let dq = -(vv * r[a] / z3 + 2.0 * s * v[a] / z3 + 3.0 * s * s * r[a] / z5);
            let dw = -(ea / z + r * (r[a] / z3)) * q - r * (dq / z);
            let mut dcu = Vec9::zeros();
            dcu[2] = mj * dq;
            dcu.fixed_rows_mut::<2>(col).copy_from(&(dw * mj));

            let k = col + a;
            let dacc = solver.solve(&(-dcu - dm * acc))?;
            df.fixed_view_mut::<9, 1>(9, k).copy_from(&dacc);
            let dgm = solver.solve(&(dh - dm * gm))?;
            dg[k].fixed_view_mut::<9, 9>(9, 0).copy_from(&dgm);

            // derivative along v_{j,a}
            let dqv = -(2.0 * v[a] / z + 2.0 * s * r[a] / z3);
            let dwv = -r * (dqv / z);
            let mut dcuv = Vec9::zeros();
            dcuv[2] = mj * dqv;
            dcuv.fixed_rows_mut::<2>(col).copy_from(&(dwv * mj));
            let daccv = solver.solve(&(-dcuv))?;
            df.fixed_view_mut::<9, 1>(9, 9 + k).copy_from(&daccv);
        }
    }
    Ok(PlantJacobians { f, g, df, dg })
}

/// Admissible state sampler used by tests and training: projects each
/// cable projection into the disc of radius `radius`.
pub fn project_cables(state: &mut FullState, radius: f64) {
    for j in 0..N_DRONES {
        let r = state.cable_projection(j);
        let n = r.norm();
        if n > radius {
            state.0.fixed_rows_mut::<2>(3 + 2 * j).copy_from(&(r * (radius / n)));
        }
    }
}
