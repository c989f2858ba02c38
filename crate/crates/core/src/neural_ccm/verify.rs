//! Empirical check of the certificate conditions on fresh samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conditions::{sample_terms, LossBreakdown, LossWeights};
use super::train::{prepare, sample_training_states, SamplingConfig, TrainConfig};
use super::{CertificateConstants, CertificatePair};
use crate::dynamics::SystemParams;
use crate::math::quantile;
use crate::trajectory::Reference;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenQuantiles {
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl EigenQuantiles {
    fn of(values: &[f64]) -> Self {
        Self {
            p05: quantile(values, 0.05),
            p50: quantile(values, 0.5),
            p95: quantile(values, 0.95),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEigQuantiles {
    /// Contraction left-hand side.
    pub contraction: EigenQuantiles,
    /// `W` itself (compare with `w_upper`).
    pub metric: EigenQuantiles,
    pub dual_c1: EigenQuantiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualResiduals {
    pub violation_rate_c1: f64,
    pub c2_frobenius_mean: f64,
    pub c2_frobenius_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_samples: usize,
    pub seed: u64,
    pub violation_rate_eq11: f64,
    pub violation_rate_eq12: f64,
    /// Fraction satisfying both the contraction condition and the metric
    /// bound.
    pub joint_pass_rate: f64,
    pub max_eig_quantiles: MaxEigQuantiles,
    pub dual_residuals: DualResiduals,
    /// Hinge loss of the certificate on these samples (zero margin weights
    /// as configured for training).
    pub loss: LossBreakdown,
    pub constants: CertificateConstants,
}

/// Samples from the training distribution of the certificate's own config
/// (defaults when it carries none).
pub fn verify(
    params: &SystemParams,
    cert: &CertificatePair,
    n_samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let cfg = cert.train_config.clone().unwrap_or_default();
    let reference = Reference::new(params, &cfg.formation, &cfg.figure8)?;
    verify_with(params, cert, &reference, &cfg.sampling, n_samples, seed)
}

pub fn verify_with(
    params: &SystemParams,
    cert: &CertificatePair,
    reference: &Reference,
    sampling: &SamplingConfig,
    n_samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("verification needs at least one sample".into()));
    }
    cert.validate()?;
    let cfg: TrainConfig = cert.train_config.clone().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sample_training_states(params, reference, sampling, n_samples, &mut rng)?;
    let weights: LossWeights = cfg.weights;
    let mut eq11 = Vec::with_capacity(n_samples);
    let mut wmax = Vec::with_capacity(n_samples);
    let mut c1 = Vec::with_capacity(n_samples);
    let mut c2 = Vec::with_capacity(n_samples);
    let mut joint = 0usize;
    let mut loss = LossBreakdown::default();
    for chunk in samples.chunks(256) {
        for s in prepare(params, chunk)? {
            let t = sample_terms(cert, &s, &weights, cfg.margin, None)?;
            if t.contraction < 0.0 && t.metric_bound < 0.0 {
                joint += 1;
            }
            eq11.push(t.contraction);
            wmax.push(t.metric_bound + cert.w_upper);
            c1.push(t.dual_c1);
            c2.push(t.dual_c2);
            loss.contraction += (t.contraction + cfg.margin).max(0.0);
            loss.metric_bound += (t.metric_bound + cfg.margin).max(0.0);
            loss.dual_c1 += (t.dual_c1 + cfg.margin).max(0.0);
            loss.dual_c2 += t.dual_c2;
        }
    }
    let n = n_samples as f64;
    let rate = |v: &[f64], thr: f64| v.iter().filter(|&&e| e >= thr).count() as f64 / n;
    loss.contraction /= n;
    loss.metric_bound /= n;
    loss.dual_c1 /= n;
    loss.dual_c2 /= n;
    loss.violation_rate_eq11 = rate(&eq11, 0.0);
    loss.total = weights.contraction * loss.contraction
        + weights.metric_bound * loss.metric_bound
        + weights.dual_c1 * loss.dual_c1
        + weights.dual_c2 * loss.dual_c2;
    Ok(VerificationReport {
        n_samples,
        seed,
        violation_rate_eq11: rate(&eq11, 0.0),
        violation_rate_eq12: rate(&wmax, cert.w_upper),
        joint_pass_rate: joint as f64 / n,
        max_eig_quantiles: MaxEigQuantiles {
            contraction: EigenQuantiles::of(&eq11),
            metric: EigenQuantiles::of(&wmax),
            dual_c1: EigenQuantiles::of(&c1),
        },
        dual_residuals: DualResiduals {
            violation_rate_c1: rate(&c1, 0.0),
            c2_frobenius_mean: c2.iter().sum::<f64>() / n,
            c2_frobenius_max: c2.iter().copied().fold(0.0, f64::max),
        },
        loss,
        constants: cert.constants(),
    })
}
