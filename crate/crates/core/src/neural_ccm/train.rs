//! Sampling, Adam optimisation and the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conditions::{loss_and_gradient, LossBreakdown, LossWeights, NetGrads, PreparedSample};
use super::verify::{verify_with, VerificationReport};
use super::{Architecture, CertificateConstants, CertificatePair, Mlp, TrainSample};
use crate::dynamics::{project_cables, FullState, SystemParams};
use crate::trajectory::{Figure8Config, FormationSpec, Reference};
use crate::{Error, Result, DOF, STATE_DIM};

/// Perturbation box around the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Half-width of the uniform perturbation of payload position and cable
    /// projections (m).
    pub position_range: f64,
    /// Half-width of the uniform perturbation of the generalized speeds.
    pub velocity_range: f64,
    /// Cable projections are projected into this disc; defaults to the
    /// admissible limit `l - z_guard`.
    pub cable_radius: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { position_range: 0.5, velocity_range: 0.5, cable_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub system: SystemParams,
    pub formation: FormationSpec,
    pub figure8: Figure8Config,
    pub architecture: Architecture,
    pub constants: CertificateConstants,
    pub weights: LossWeights,
    pub margin: f64,
    pub sampling: SamplingConfig,
    pub learning_rate: f64,
    /// Learning rate at the last batch relative to `learning_rate`
    /// (exponential schedule).
    pub final_lr_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fresh batches drawn per epoch.
    pub batches_per_epoch: usize,
    /// Gradient global-norm clip (0 disables).
    pub grad_clip: f64,
    pub validation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            system: SystemParams::default(),
            formation: FormationSpec::default(),
            figure8: Figure8Config::default(),
            architecture: Architecture::default(),
            constants: CertificateConstants::default(),
            weights: LossWeights::default(),
            margin: 0.01,
            sampling: SamplingConfig::default(),
            learning_rate: 1e-3,
            final_lr_ratio: 0.1,
            batch_size: 256,
            epochs: 40,
            batches_per_epoch: 50,
            grad_clip: 10.0,
            validation_samples: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.constants.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.batches_per_epoch == 0 {
            return bad("batch_size, epochs and batches_per_epoch must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.final_lr_ratio > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.margin >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("margin and grad_clip must be non-negative");
        }
        let s = &self.sampling;
        if !(s.position_range >= 0.0) || !(s.velocity_range >= 0.0) {
            return bad("sampling ranges must be non-negative");
        }
        if let Some(r) = s.cable_radius {
            if !(r > 0.0 && r <= self.system.max_projection()) {
                return bad("cable_radius must lie in (0, l - z_guard]");
            }
        }
        Ok(())
    }

    pub fn reference(&self) -> Result<Reference> {
        Reference::new(&self.system, &self.formation, &self.figure8)
    }
}

/// Draws `n` samples: reference at a uniform phase of the figure-8 plus a
/// uniform perturbation, with cable projections pulled back into the
/// admissible disc.
pub fn sample_training_states<R: Rng>(
    params: &SystemParams,
    reference: &Reference,
    sampling: &SamplingConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    let radius = sampling.cable_radius.unwrap_or(params.max_projection()) * (1.0 - 1e-9);
    let period = reference.figure8().period;
    (0..n)
        .map(|_| {
            let rs = reference.sample(rng.random_range(0.0..period))?;
            let mut x = rs.x_star;
            for i in 0..STATE_DIM {
                let h = if i < DOF { sampling.position_range } else { sampling.velocity_range };
                if h > 0.0 {
                    x.0[i] += rng.random_range(-h..h);
                }
            }
            project_cables(&mut x, radius);
            Ok(TrainSample { x: FullState(x.0), x_star: rs.x_star, k_star: rs.k_star })
        })
        .collect()
}

pub(crate) fn prepare(params: &SystemParams, samples: &[TrainSample]) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| PreparedSample::new(params, s)).collect()
}

struct Adam {
    m: NetGrads,
    v: NetGrads,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(cert: &CertificatePair) -> Self {
        Self { m: NetGrads::zeros_like(cert), v: NetGrads::zeros_like(cert), t: 0 }
    }

    fn step(&mut self, cert: &mut CertificatePair, grads: &NetGrads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let nets: [(&mut Mlp, &Mlp, &mut Mlp, &mut Mlp); 3] = [
            (&mut cert.l_net, &grads.l, &mut self.m.l, &mut self.v.l),
            (&mut cert.k1_net, &grads.k1, &mut self.m.k1, &mut self.v.k1),
            (&mut cert.k2_net, &grads.k2, &mut self.m.k2, &mut self.v.k2),
        ];
        for (net, g, m, v) in nets {
            for (((p, g), m), v) in net.params_mut().into_iter().zip(g.params()).zip(m.params_mut()).zip(v.params_mut())
            {
                for i in 0..p.len() {
                    m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                    v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

fn scale_grads(grads: &mut NetGrads, factor: f64) {
    for net in [&mut grads.l, &mut grads.k1, &mut grads.k2] {
        for slice in net.params_mut() {
            slice.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of the batch losses in this epoch.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cert: CertificatePair,
    pub history: Vec<EpochStats>,
    /// Held-out verification after the last epoch.
    pub validation: VerificationReport,
}

pub fn train(cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with_callback(cfg, seed, |_| {})
}

/// Deterministic training: the same `cfg` and `seed` give bit-identical
/// weights.
pub fn train_with_callback<F: FnMut(&EpochStats)>(
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let reference = cfg.reference()?;
    let params = &cfg.system;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cert = CertificatePair::init(&cfg.architecture, &cfg.constants, &mut rng)?;
    let mut adam = Adam::new(&cert);
    let total = cfg.epochs * cfg.batches_per_epoch;
    let decay = cfg.final_lr_ratio.powf(1.0 / (total.max(2) - 1) as f64);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut acc = LossBreakdown::default();
        let mut lr = cfg.learning_rate;
        for _ in 0..cfg.batches_per_epoch {
            lr = cfg.learning_rate * decay.powi(step);
            let samples = sample_training_states(params, &reference, &cfg.sampling, cfg.batch_size, &mut rng)?;
            let batch = prepare(params, &samples)?;
            // Huge weights surface as a failed Cholesky factorization.
            let (loss, grads) =
                loss_and_gradient(&cert, &batch, &cfg.weights, cfg.margin, true).map_err(|e| match e {
                    Error::SolveFailure(_) => Error::TrainingDiverged { epoch, loss: f64::NAN },
                    e => e,
                })?;
            let mut grads = grads.expect("gradient requested");
            let norm = grads.global_norm();
            if !loss.total.is_finite() || !norm.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: loss.total });
            }
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                scale_grads(&mut grads, cfg.grad_clip / norm);
            }
            adam.step(&mut cert, &grads, lr);
            if !(cert.l_net.is_finite() && cert.k1_net.is_finite() && cert.k2_net.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, loss: loss.total });
            }
            acc.contraction += loss.contraction;
            acc.metric_bound += loss.metric_bound;
            acc.dual_c1 += loss.dual_c1;
            acc.dual_c2 += loss.dual_c2;
            acc.total += loss.total;
            acc.violation_rate_eq11 += loss.violation_rate_eq11;
            step += 1;
        }
        let n = cfg.batches_per_epoch as f64;
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            loss: LossBreakdown {
                contraction: acc.contraction / n,
                metric_bound: acc.metric_bound / n,
                dual_c1: acc.dual_c1 / n,
                dual_c2: acc.dual_c2 / n,
                total: acc.total / n,
                violation_rate_eq11: acc.violation_rate_eq11 / n,
            },
        };
        log::info!(
            "epoch {epoch}: loss {:.4e} (contraction {:.3e}, bound {:.3e}, c1 {:.3e}, c2 {:.3e}), eq11 violations {:.3}",
            stats.loss.total,
            stats.loss.contraction,
            stats.loss.metric_bound,
            stats.loss.dual_c1,
            stats.loss.dual_c2,
            stats.loss.violation_rate_eq11
        );
        on_epoch(&stats);
        history.push(stats);
    }
    cert.seed = Some(seed);
    cert.train_config = Some(cfg.clone());
    let validation =
        verify_with(params, &cert, &reference, &cfg.sampling, cfg.validation_samples.max(1), seed ^ 0x5e_ed0f_7a11)?;
    Ok(TrainOutcome { cert, history, validation })
}
