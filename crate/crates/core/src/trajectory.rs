//! Figure-8 payload reference with a rigid cable formation, and the
//! inverse-dynamics feedforward `k*` that holds the reference exactly in the
//! disturbance-free plant.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{assemble, FullState, SystemParams, Vec9};
use crate::{ControlVec, Error, Result, Vec2, Vec3, N_DRONES};

/// How `theta_z` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltConvention {
    /// Cable tilt measured from the vertical: `|r| = l sin(theta_z)`.
    #[default]
    FromVertical,
    /// Cable elevation measured from the horizontal projection: `|r| = l cos(theta_z)`.
    FromHorizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSpec {
    /// Azimuth of the first cable (rad); the others follow at 120 degree spacing.
    pub theta_xy: f64,
    /// Cable tilt (rad).
    pub theta_z: f64,
    /// Cable length (m).
    pub l: f64,
    #[serde(default)]
    pub convention: TiltConvention,
}

impl Default for FormationSpec {
    fn default() -> Self {
        Self {
            theta_xy: 30f64.to_radians(),
            theta_z: 15f64.to_radians(),
            l: 0.98,
            convention: TiltConvention::FromVertical,
        }
    }
}

/// Constant horizontal cable projections of the formation.
pub fn formation_projections(spec: &FormationSpec) -> Result<[Vec2; N_DRONES]> {
    if !(spec.l > 0.0) {
        return Err(Error::InvalidConfig("formation cable length must be positive".into()));
    }
    if !(spec.theta_z >= 0.0 && spec.theta_z < PI / 2.0) {
        return Err(Error::FormationInfeasible(format!("theta_z = {} outside [0, pi/2)", spec.theta_z)));
    }
    let radius = match spec.convention {
        TiltConvention::FromVertical => spec.l * spec.theta_z.sin(),
        TiltConvention::FromHorizontal => spec.l * spec.theta_z.cos(),
    };
    let mut r = [Vec2::zeros(); N_DRONES];
    for (j, rj) in r.iter_mut().enumerate() {
        let phi = spec.theta_xy + j as f64 * TAU / N_DRONES as f64;
        *rj = Vec2::new(radius * phi.cos(), radius * phi.sin());
    }
    let z = (spec.l * spec.l - radius * radius).max(0.0).sqrt();
    let dirs = nalgebra::Matrix3::from_columns(&r.map(|rj| Vec3::new(rj.x, rj.y, z) / spec.l));
    let det = dirs.determinant();
    if det.abs() < 1e-9 {
        return Err(Error::FormationInfeasible(format!("cable directions are linearly dependent (det = {det:.3e})")));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure8Config {
    /// Amplitude along x (m).
    pub a_x: f64,
    /// Amplitude along y (m).
    pub a_y: f64,
    /// Period of one lap (s).
    pub period: f64,
    /// Constant altitude (m).
    pub z0: f64,
}

impl Default for Figure8Config {
    fn default() -> Self {
        Self { a_x: 1.5, a_y: 0.75, period: 31.5, z0: 1.0 }
    }
}

/// Lemniscate `[A_x sin(wt), A_y sin(2wt), z0]` with analytic derivatives.
pub fn figure8(t: f64, cfg: &Figure8Config) -> (Vec3, Vec3, Vec3) {
    let w = TAU / cfg.period;
    let (s1, c1) = (w * t).sin_cos();
    let (s2, c2) = (2.0 * w * t).sin_cos();
    let pos = Vec3::new(cfg.a_x * s1, cfg.a_y * s2, cfg.z0);
    let vel = Vec3::new(cfg.a_x * w * c1, 2.0 * w * cfg.a_y * c2, 0.0);
    let acc = Vec3::new(-cfg.a_x * w * w * s1, -4.0 * w * w * cfg.a_y * s2, 0.0);
    (pos, vel, acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub x_star: FullState,
    /// Reference generalized acceleration.
    pub u_dot_star: Vec9,
    /// Feedforward control (N).
    pub k_star: ControlVec,
}

/// Reference generator: precomputes the formation once.
#[derive(Debug, Clone)]
pub struct Reference {
    params: SystemParams,
    figure8: Figure8Config,
    projections: [Vec2; N_DRONES],
}

impl Reference {
    pub fn new(params: &SystemParams, formation: &FormationSpec, figure8: &Figure8Config) -> Result<Self> {
        params.validate()?;
        if !(figure8.period > 0.0) {
            return Err(Error::InvalidConfig("figure-8 period must be positive".into()));
        }
        let projections = formation_projections(formation)?;
        let limit = params.max_projection();
        if let Some((j, r)) = projections.iter().enumerate().find(|(_, r)| r.norm() > limit) {
            return Err(Error::GuardViolation { cable: j, norm: r.norm(), limit });
        }
        Ok(Self { params: params.clone(), figure8: figure8.clone(), projections })
    }

    pub fn projections(&self) -> &[Vec2; N_DRONES] {
        &self.projections
    }

    pub fn figure8(&self) -> &Figure8Config {
        &self.figure8
    }

    pub fn sample(&self, t: f64) -> Result<ReferenceSample> {
        let (pos, vel, acc) = figure8(t, &self.figure8);
        let mut u = ControlVec::zeros();
        u.fixed_rows_mut::<3>(0).copy_from(&vel);
        let mut u_dot = Vec9::zeros();
        u_dot.fixed_rows_mut::<3>(0).copy_from(&acc);
        let x_star = FullState::new(pos, self.projections, u);
        let sm = assemble(&self.params, &x_star)?;
        let rhs = sm.m * u_dot + sm.c * u - sm.f_gp;
        let k_star = sm.h.lu().solve(&rhs).ok_or(Error::SolveFailure("control matrix H is singular"))?;
        Ok(ReferenceSample { x_star, u_dot_star: u_dot, k_star })
    }
}

/// One-shot convenience wrapper around [`Reference`].
pub fn reference_sample(
    params: &SystemParams,
    formation: &FormationSpec,
    figure8: &Figure8Config,
    t: f64,
) -> Result<ReferenceSample> {
    Reference::new(params, formation, figure8)?.sample(t)
}

/// Writes `t, x_star[18], u_dot_star[9], k_star[9]` rows on a uniform grid.
/// Columns 9..17 of `x_star` are the reference generalized speeds `u*`.
pub fn export_reference_csv<W: Write>(reference: &Reference, duration: f64, dt: f64, out: W) -> Result<usize> {
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(Error::InvalidConfig("export grid needs dt > 0 and duration >= 0".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..18).map(|i| format!("x_star_{i}")));
    header.extend((0..9).map(|i| format!("u_dot_star_{i}")));
    header.extend((0..9).map(|i| format!("k_star_{i}")));
    w.write_record(&header)?;
    let n = (duration / dt).round() as usize;
    for k in 0..=n {
        let t = k as f64 * dt;
        let s = reference.sample(t)?;
        let mut row = Vec::with_capacity(37);
        row.push(t);
        row.extend(s.x_star.0.iter());
        row.extend(s.u_dot_star.iter());
        row.extend(s.k_star.iter());
        let mut buf = ryu::Buffer::new();
        w.write_record(row.iter().map(|&v| buf.format(v).to_owned()))?;
    }
    w.flush()?;
    Ok(n + 1)
}
