//! Summary metrics of a run and the contraction robustness-bound check.

use serde::{Deserialize, Serialize};

use super::log::SimLog;
use crate::neural_ccm::{metric_p, CertificatePair};
use crate::{Error, FullState, Result, StateVec, N_DRONES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: usize,
    /// Payload position RMSE per axis (m).
    pub rmse: [f64; 3],
    pub rmse_norm: f64,
    /// Window over which the steady-state quantities are averaged (s).
    pub steady_window: f64,
    /// Mean payload position error norm over the final window (m).
    pub steady_state_error: f64,
    /// Mean `||delta_hat_T - delta_T||` over the final window (N).
    pub steady_state_delta_t_error: f64,
    pub terminal_delta_t_error: f64,
    pub terminal_delta_perp_error: [f64; N_DRONES],
    /// Largest component of `|zeta_nn,sat - k*|`.
    pub max_saturated_feedback: f64,
    /// Largest component of `|zeta - k*|` for the realized lifts.
    pub max_zeta_deviation: f64,
    pub max_f_delta: f64,
    /// Largest component of the commanded lift.
    pub max_zeta_c: f64,
    /// `f_b + max |k*| + max |f_delta|` (componentwise).
    pub zeta_bound: f64,
    pub max_geodesic_error: f64,
    pub max_lift_error: f64,
    /// Consecutive record pairs after the disturbance cutoff.
    pub v_e_checked_steps: usize,
    /// Pairs with `V_e(k+1) - V_e(k) > 1e-6 V_e(k)`.
    pub v_e_violations: usize,
    pub v_e_violation_fraction: f64,
}

/// Relative per-step tolerance on increases of `V_e`.
pub const V_E_TOLERANCE: f64 = 1e-6;

fn inf(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

pub fn metrics(log: &SimLog) -> Result<Metrics> {
    let recs = &log.records;
    let last = recs.last().ok_or(Error::EmptyLog)?;
    let n = recs.len() as f64;
    let mut sq = [0.0; 3];
    for r in recs {
        let e = r.payload_error();
        for i in 0..3 {
            sq[i] += e[i] * e[i];
        }
    }
    let rmse = sq.map(|s| (s / n).sqrt());
    let window_start = last.t - log.config.steady_window;
    let window: Vec<_> = recs.iter().filter(|r| r.t > window_start - 1e-12).collect();
    let wn = window.len() as f64;

    let max_k_star = inf(recs.iter().flat_map(|r| r.k_star.iter().copied()));
    let max_f_delta = inf(recs.iter().flat_map(|r| r.f_delta.iter().copied()));

    let cutoff = log.config.disturbance.cutoff;
    let mut checked = 0;
    let mut violations = 0;
    for w in recs.windows(2) {
        if w[0].t >= cutoff {
            checked += 1;
            if w[1].v_e - w[0].v_e > V_E_TOLERANCE * w[0].v_e {
                violations += 1;
            }
        }
    }

    Ok(Metrics {
        rows: recs.len(),
        rmse,
        rmse_norm: rmse.iter().map(|v| v * v).sum::<f64>().sqrt(),
        steady_window: log.config.steady_window,
        steady_state_error: window.iter().map(|r| r.payload_error().norm()).sum::<f64>() / wn,
        steady_state_delta_t_error: window.iter().map(|r| r.delta_t_error()).sum::<f64>() / wn,
        terminal_delta_t_error: last.delta_t_error(),
        terminal_delta_perp_error: std::array::from_fn(|j| last.delta_perp_error(j)),
        max_saturated_feedback: inf(recs.iter().flat_map(|r| r.saturated_feedback.iter().copied())),
        max_zeta_deviation: inf(recs.iter().map(|r| (r.zeta - r.k_star).amax())),
        max_f_delta,
        max_zeta_c: inf(recs.iter().flat_map(|r| r.zeta_c.iter().copied())),
        zeta_bound: log.constants.f_b + max_k_star + max_f_delta,
        max_geodesic_error: inf(recs.iter().flat_map(|r| r.geodesic_error)),
        max_lift_error: inf(recs.iter().flat_map(|r| (0..N_DRONES).map(|j| r.lift_error(j)))),
        v_e_checked_steps: checked,
        v_e_violations: violations,
        v_e_violation_fraction: if checked > 0 { violations as f64 / checked as f64 } else { 0.0 },
    })
}

/// `∫_0^1 sqrt(eᵀ P(x* + s e) e) ds` along the straight line from `x_star`
/// to `x` (composite Simpson, `intervals` even). This upper-bounds the
/// Riemannian distance.
pub fn straight_line_distance(
    cert: &CertificatePair,
    x_star: &StateVec,
    x: &StateVec,
    intervals: usize,
) -> Result<f64> {
    let n = intervals.max(2).next_multiple_of(2);
    let e = x - x_star;
    let h = 1.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let p = metric_p(cert, &FullState(x_star + e * (i as f64 * h)))?;
        let f = e.dot(&(p * e)).max(0.0).sqrt();
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * f;
    }
    Ok(sum * h / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Straight-line metric distance at `t = 0`.
    pub v_l0: f64,
    /// Largest logged perturbation norm.
    pub d_bar: f64,
    pub lambda: f64,
    pub w_lower: f64,
    pub w_upper: f64,
    pub steps: usize,
    pub violations: usize,
    /// Largest ratio of the state error to the bound.
    pub max_ratio: f64,
    pub first_violation_t: Option<f64>,
}

impl RobustnessReport {
    pub fn bound(&self, t: f64) -> f64 {
        self.w_upper.sqrt() * self.v_l0 * (-self.lambda * t).exp()
            + self.d_bar / self.lambda * (self.w_upper / self.w_lower).sqrt()
    }
}

/// Checks `||x - x*|| <= sqrt(w̄) V_L(0) e^(-λt) + (d̄/λ) sqrt(w̄/w̲)` at every
/// logged step, with `d̄` the largest logged perturbation.
pub fn robustness_check(log: &SimLog, cert: &CertificatePair) -> Result<RobustnessReport> {
    let first = log.records.first().ok_or(Error::EmptyLog)?;
    let mut report = RobustnessReport {
        v_l0: straight_line_distance(cert, &first.x_ref, &first.x, 64)?,
        d_bar: log.records.iter().map(|r| r.perturbation_norm).fold(0.0, f64::max),
        lambda: cert.lambda,
        w_lower: cert.w_lower,
        w_upper: cert.w_upper,
        steps: log.records.len(),
        violations: 0,
        max_ratio: 0.0,
        first_violation_t: None,
    };
    for r in &log.records {
        let ratio = r.state_error_norm() / report.bound(r.t - first.t);
        report.max_ratio = report.max_ratio.max(ratio);
        if ratio > 1.0 {
            report.violations += 1;
            report.first_violation_t.get_or_insert(r.t);
        }
    }
    Ok(report)
}
