//! Closed-loop simulation: reference, saturated neural controller, UDE
//! compensation, per-drone attitude loops and the plant, with disturbance
//! injection and per-step logging.

mod log;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attitude::{commanded_lift, realized_lift, AttitudeGains, AttitudeTracker};
use crate::dynamics::{affine_fields, cable_vectors, quad_accelerations, step, FullState, SystemParams, Vec9};
use crate::neural_ccm::{controller, CertificatePair};
use crate::trajectory::{Figure8Config, FormationSpec, Reference};
use crate::ude::{
    allocate, effective_disturbances, lyapunov_ve, update_delta_j, update_delta_t, EstimatorState, LyapunovWeights,
    UdeGains,
};
use crate::{ControlVec, DistVec, Error, Result, StateVec, Vec3, DIST_DIM, N_DRONES, STATE_DIM};

pub use self::log::{certificate_hash, AbortInfo, LogMetadata, SimLog, SimRecord, LOG_FORMAT};
pub use self::metrics::{metrics, robustness_check, straight_line_distance, Metrics, RobustnessReport};

/// Constant disturbance used in the figure-8 scenario.
pub const DEFAULT_DISTURBANCE: [f64; DIST_DIM] = [0.3, -0.2, 0.5, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceConfig {
    /// `[payload, drone 1, drone 2, drone 3]` forces (N).
    pub constant: [f64; DIST_DIM],
    /// Each component gets `scale * U(0, 1)` added before `cutoff`.
    pub stochastic_scale: f64,
    /// Time after which only the constant part remains (s).
    pub cutoff: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { constant: DEFAULT_DISTURBANCE, stochastic_scale: 0.3, cutoff: 31.5 }
    }
}

impl DisturbanceConfig {
    pub fn none() -> Self {
        Self { constant: [0.0; DIST_DIM], stochastic_scale: 0.0, cutoff: 0.0 }
    }

    pub fn constant_only(constant: [f64; DIST_DIM]) -> Self {
        Self { constant, stochastic_scale: 0.0, cutoff: 0.0 }
    }
}

/// Disturbance at time `t`. Draws from `rng` only while the stochastic part
/// is active.
pub fn disturbance<R: Rng>(cfg: &DisturbanceConfig, t: f64, rng: &mut R) -> DistVec {
    let mut d = DistVec::from_row_slice(&cfg.constant);
    if t < cfg.cutoff && cfg.stochastic_scale > 0.0 {
        for v in d.iter_mut() {
            *v += cfg.stochastic_scale * rng.random::<f64>();
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeMode {
    /// Each drone realizes its lift through the attitude loop.
    #[default]
    Full,
    /// Commanded lifts are applied directly.
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub ude_enabled: bool,
    pub disturbance: DisturbanceConfig,
    pub system: SystemParams,
    pub formation: FormationSpec,
    pub figure8: Figure8Config,
    pub ude_gains: UdeGains,
    pub lyapunov: LyapunovWeights,
    pub attitude: AttitudeGains,
    pub attitude_mode: AttitudeMode,
    /// The outer loop (controller and compensation) is recomputed every
    /// `control_divider` steps and held in between.
    pub control_divider: usize,
    /// Half-width of zero-mean uniform noise on the measured drone
    /// accelerations (m/s^2).
    pub imu_noise: f64,
    /// Initial state minus the reference state at `t = 0`.
    pub initial_offset: [f64; STATE_DIM],
    /// Length of the final averaging window used by the metrics (s).
    pub steady_window: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "figure8".into(),
            duration: 63.0,
            dt: 1e-3,
            seed: 0,
            ude_enabled: true,
            disturbance: DisturbanceConfig::default(),
            system: SystemParams::default(),
            formation: FormationSpec::default(),
            figure8: Figure8Config::default(),
            ude_gains: UdeGains::default(),
            lyapunov: LyapunovWeights::default(),
            attitude: AttitudeGains::default(),
            attitude_mode: AttitudeMode::Full,
            control_divider: 1,
            imu_noise: 0.0,
            initial_offset: [0.0; STATE_DIM],
            steady_window: 5.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("duration and dt must be positive");
        }
        if self.dt > self.duration {
            return bad("dt must not exceed duration");
        }
        let d = &self.disturbance;
        if !(d.stochastic_scale >= 0.0) || !(d.cutoff >= 0.0) || d.cutoff > self.duration {
            return bad("disturbance cutoff must lie in [0, duration] and the stochastic scale be non-negative");
        }
        if d.constant.iter().any(|v| !v.is_finite()) || self.initial_offset.iter().any(|v| !v.is_finite()) {
            return bad("disturbance and initial offset must be finite");
        }
        if self.control_divider == 0 {
            return bad("control_divider must be at least 1");
        }
        if !(self.imu_noise >= 0.0) || !(self.steady_window > 0.0) {
            return bad("imu_noise must be non-negative and steady_window positive");
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("scenario name must be a non-empty file-name component");
        }
        self.system.validate()?;
        self.ude_gains.validate()?;
        self.attitude.validate()
    }

    /// Sets the duration, pulling the disturbance cutoff in if it would lie
    /// beyond the new end (the realized disturbance is unchanged).
    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self.disturbance.cutoff = self.disturbance.cutoff.min(duration);
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// `<scenario>_<seed>_<on|off>`, the stem of the log and metadata files.
    pub fn output_stem(&self) -> String {
        format!("{}_{}_{}", self.name, self.seed, if self.ude_enabled { "on" } else { "off" })
    }
}

fn block(v: &ControlVec, j: usize) -> Vec3 {
    v.fixed_rows::<3>(3 * j).into_owned()
}

/// Stream for measurement noise, independent of the disturbance stream so
/// that toggling noise leaves the disturbance realization unchanged.
const IMU_STREAM: u64 = 0x1_3a7e_5eed;

/// Runs the scenario. Configuration errors are returned; failures during
/// the run (guard trip, singular allocation, degenerate lift) stop the loop
/// and are reported in [`SimLog::abort`] with the records up to that step.
pub fn run(cfg: &ScenarioConfig, cert: &CertificatePair) -> Result<SimLog> {
    cfg.validate()?;
    cert.validate()?;
    let params = &cfg.system;
    let reference = Reference::new(params, &cfg.formation, &cfg.figure8)?;
    let start = reference.sample(0.0)?;
    let x0 = FullState(start.x_star.0 + StateVec::from_row_slice(&cfg.initial_offset));
    x0.check_guard(params).map_err(|e| Error::InvalidConfig(format!("initial state is not admissible: {e}")))?;
    let mut sim = Closed::new(cfg, cert, &reference, x0)?;
    let n = cfg.n_steps();
    let mut log = SimLog::new(cfg.clone(), cert, n)?;
    for k in 0..n {
        match sim.advance(k) {
            Ok(rec) => log.records.push(rec),
            Err(e) => {
                log.abort = Some(AbortInfo {
                    step: k,
                    t: k as f64 * cfg.dt,
                    kind: AbortInfo::kind_of(&e),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(log)
}

/// Mutable state of one closed-loop run.
struct Closed<'a> {
    cfg: &'a ScenarioConfig,
    cert: &'a CertificatePair,
    reference: &'a Reference,
    x: FullState,
    est: EstimatorState,
    trackers: Option<Vec<AttitudeTracker>>,
    dist_rng: ChaCha8Rng,
    imu_rng: ChaCha8Rng,
    held: Option<Held>,
}

#[derive(Clone, Copy)]
struct Held {
    k_fb: ControlVec,
    sat: ControlVec,
    f_delta: ControlVec,
}

impl<'a> Closed<'a> {
    fn new(cfg: &'a ScenarioConfig, cert: &'a CertificatePair, reference: &'a Reference, x: FullState) -> Result<Self> {
        Ok(Self {
            cfg,
            cert,
            reference,
            est: EstimatorState::new(&cfg.system, &x, cfg.ude_gains)?,
            x,
            trackers: None,
            dist_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            imu_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ IMU_STREAM),
            held: None,
        })
    }

    fn advance(&mut self, k: usize) -> Result<SimRecord> {
        let cfg = self.cfg;
        let params = &cfg.system;
        let dt = cfg.dt;
        let t = k as f64 * dt;
        let grav = params.gravity();
        let rs = self.reference.sample(t)?;
        let cables = cable_vectors(params, &self.x)?;

        if k.is_multiple_of(cfg.control_divider) || self.held.is_none() {
            let k_fb = controller(self.cert, &self.x, &rs.x_star, &ControlVec::zeros());
            let sat = k_fb.map(|v| (self.cert.a * v).tanh() * self.cert.f_b);
            let f_delta = if cfg.ude_enabled { allocate(&self.est, &cables)? } else { ControlVec::zeros() };
            self.held = Some(Held { k_fb, sat, f_delta });
        }
        let Held { k_fb, sat, f_delta } = self.held.expect("set above");
        let zeta_c = rs.k_star + sat + f_delta;

        let mut zeta = zeta_c;
        let mut geodesic = [0.0; N_DRONES];
        let mut omega_tilde = [0.0; N_DRONES];
        let mut thrust = [0.0; N_DRONES];
        for (j, th) in thrust.iter_mut().enumerate() {
            *th = commanded_lift(&block(&zeta_c, j), params.m_j[j], &grav).norm();
        }
        if cfg.attitude_mode == AttitudeMode::Full {
            if self.trackers.is_none() {
                let trackers = (0..N_DRONES)
                    .map(|j| {
                        AttitudeTracker::aligned(
                            cfg.attitude,
                            &commanded_lift(&block(&zeta_c, j), params.m_j[j], &grav),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.trackers = Some(trackers);
            }
            let trackers = self.trackers.as_mut().expect("initialised above");
            for (j, tr) in trackers.iter_mut().enumerate() {
                let before = tr.state;
                let f_lc = commanded_lift(&block(&zeta_c, j), params.m_j[j], &grav);
                let s = tr.step(&f_lc, dt)?;
                zeta.fixed_rows_mut::<3>(3 * j).copy_from(&realized_lift(&before, s.thrust, params.m_j[j], &grav));
                geodesic[j] = s.geodesic_error;
                omega_tilde[j] = s.omega_tilde.norm();
            }
        }

        let delta = disturbance(&cfg.disturbance, t, &mut self.dist_rng);
        let (delta_t, delta_perp) = effective_disturbances(&delta, &cables)?;
        let delta_j: [Vec3; N_DRONES] = std::array::from_fn(|j| delta.fixed_rows::<3>(3 + 3 * j).into_owned());
        let v_e = lyapunov_ve(&self.est, &delta_t, &delta_j, &cfg.lyapunov);
        let delta_hat_perp = self.est.delta_hat_perp(&cables)?;

        let fields = affine_fields(params, &self.x)?;
        let perturbation = fields.g * (zeta - rs.k_star - k_fb) + fields.g_delta * delta;
        let u_dot: Vec9 = fields.evaluate(&zeta, &delta).fixed_rows::<9>(9).into_owned();
        let acc = quad_accelerations(params, &self.x, &u_dot)?;

        let record = SimRecord {
            t,
            x: self.x.0,
            x_ref: rs.x_star.0,
            k_star: rs.k_star,
            saturated_feedback: sat,
            f_delta,
            zeta_c,
            zeta,
            delta,
            delta_hat_t: self.est.delta_hat_t,
            delta_hat_j: self.est.delta_hat_j,
            delta_hat_perp,
            delta_t,
            delta_perp,
            v_e,
            geodesic_error: geodesic,
            omega_tilde,
            thrust,
            perturbation_norm: perturbation.norm(),
        };

        let next = step(params, &self.x, &zeta, &delta, dt)?;
        let lifts: [Vec3; N_DRONES] = std::array::from_fn(|j| block(&zeta, j));
        update_delta_t(&mut self.est, params, &next, &lifts, &cables, dt)?;
        for j in 0..N_DRONES {
            let mut a = acc[j];
            if cfg.imu_noise > 0.0 {
                for v in a.iter_mut() {
                    *v += self.imu_rng.random_range(-cfg.imu_noise..cfg.imu_noise);
                }
            }
            update_delta_j(&mut self.est, j, &a, &lifts[j], &self.x.cable_projection(j), params, dt)?;
        }
        if !self.est.is_finite() || !next.0.iter().all(|v| v.is_finite()) {
            return Err(Error::SolveFailure("closed loop produced a non-finite value"));
        }
        self.x = next;
        Ok(record)
    }
}
