//! Per-sample evaluation of the certificate conditions and their
//! reverse-mode gradients with respect to all network weights.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTangent, MlpTape};
use super::{controller_features, invert_spd, metric_features, Annihilator, CertificatePair, GainMatrix};
use crate::dynamics::PlantJacobians;
use crate::math::{max_eig, sym};
use crate::{ControlVec, Result, StateMat, StateVec, DOF, STATE_DIM};

type Mat9 = SMatrix<f64, DOF, DOF>;

/// Sample with cached plant Jacobians and annihilator.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub x: StateVec,
    pub x_star: StateVec,
    pub k_star: ControlVec,
    pub jac: PlantJacobians,
    pub g_ann: Annihilator,
}

fn flatten_square(m: &StateMat) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

pub(crate) struct MetricEval {
    tape: MlpTape,
    pub l: StateMat,
    pub w: StateMat,
}

impl MetricEval {
    pub fn new(cert: &CertificatePair, x: &StateVec) -> Self {
        let tape = cert.l_net.forward(metric_features(cert, x));
        let l = StateMat::from_row_slice(tape.output.as_slice());
        let w = l.transpose() * l + StateMat::identity() * cert.w_lower;
        Self { tape, l, w }
    }

    /// `dW/dx . v`, together with the tangent needed for the reverse pass
    /// (`None` when the metric does not depend on the direction).
    pub fn wdot(&self, cert: &CertificatePair, v: &StateVec) -> (StateMat, Option<(MlpTangent, StateMat)>) {
        let dir = DVector::from_column_slice(&v.as_slice()[cert.metric_input.range()]);
        if dir.iter().all(|&d| d == 0.0) {
            return (StateMat::zeros(), None);
        }
        let tan = cert.l_net.tangent(&self.tape, dir);
        let ldot = StateMat::from_row_slice(tan.output.as_slice());
        let lt_ld = self.l.transpose() * ldot;
        (lt_ld + lt_ld.transpose(), Some((tan, ldot)))
    }
}

pub(crate) struct ControllerEval {
    t1: MlpTape,
    t2: MlpTape,
    k1: DMatrix<f64>,
    k2: DMatrix<f64>,
    e: DVector<f64>,
    th: DVector<f64>,
    pub k: ControlVec,
}

pub(crate) struct ControllerJvp {
    tan1: MlpTangent,
    tan2: MlpTangent,
    k2dot: DMatrix<f64>,
    v: DVector<f64>,
    zdot: DVector<f64>,
    tdot: DVector<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub kdot: ControlVec,
}

impl ControllerEval {
    pub fn new(cert: &CertificatePair, x: &StateVec, x_star: &StateVec, k_star: &ControlVec) -> Self {
        let c = cert.rank;
        let input = controller_features(x, x_star);
        let e = input.rows(0, STATE_DIM).into_owned();
        let t1 = cert.k1_net.forward(input.clone());
        let t2 = cert.k2_net.forward(input);
        let k1 = DMatrix::from_row_slice(c, STATE_DIM, t1.output.as_slice());
        let k2 = DMatrix::from_row_slice(DOF, c, t2.output.as_slice());
        let th = (&k1 * &e).map(f64::tanh);
        let k = ControlVec::from_iterator((&k2 * &th).iter().copied()) + k_star;
        Self { t1, t2, k1, k2, e, th, k }
    }

    /// `dk/dx = K2 diag(1 - t^2) (K1 + N1) + N2` where `N1`, `N2` collect the
    /// dependence of the gain matrices on the state.
    pub fn jacobian(&self, cert: &CertificatePair) -> GainMatrix {
        let c = cert.rank;
        let hj1 = cert.k1_net.hidden_jacobian(&self.t1, STATE_DIM);
        let hj2 = cert.k2_net.hidden_jacobian(&self.t2, STATE_DIM);
        let w2 = &cert.k1_net.w2;
        let mut e2 = DMatrix::zeros(c, w2.ncols());
        for a in 0..c {
            let block = w2.rows(a * STATE_DIM, STATE_DIM);
            e2.row_mut(a).copy_from(&(self.e.transpose() * block));
        }
        let w2b = &cert.k2_net.w2;
        let mut t2m = DMatrix::zeros(DOF, w2b.ncols());
        for i in 0..DOF {
            let block = w2b.rows(i * c, c);
            t2m.row_mut(i).copy_from(&(self.th.transpose() * block));
        }
        let mut inner = &self.k1 + e2 * hj1;
        for (mut row, t) in inner.row_iter_mut().zip(self.th.iter()) {
            row *= 1.0 - t * t;
        }
        let k = &self.k2 * inner + t2m * hj2;
        GainMatrix::from_iterator(k.iter().copied())
    }

    /// Directional derivative `K v`.
    pub fn jvp(&self, cert: &CertificatePair, v: &StateVec) -> ControllerJvp {
        let c = cert.rank;
        let mut dir = DVector::zeros(super::CONTROLLER_INPUT);
        dir.rows_mut(0, STATE_DIM).copy_from(v);
        let tan1 = cert.k1_net.tangent(&self.t1, dir.clone());
        let tan2 = cert.k2_net.tangent(&self.t2, dir);
        let k1dot = DMatrix::from_row_slice(c, STATE_DIM, tan1.output.as_slice());
        let k2dot = DMatrix::from_row_slice(DOF, c, tan2.output.as_slice());
        let v = DVector::from_column_slice(v.as_slice());
        let zdot = &k1dot * &self.e + &self.k1 * &v;
        let tdot = zdot.zip_map(&self.th, |z, t| (1.0 - t * t) * z);
        let kd = &k2dot * &self.th + &self.k2 * &tdot;
        let kdot = ControlVec::from_iterator(kd.iter().copied());
        ControllerJvp { tan1, tan2, k2dot, v, zdot, tdot, kdot }
    }

    /// Accumulates weight gradients for the adjoint `k_bar` of the control
    /// and, optionally, the adjoint of a directional derivative `K v`.
    pub fn backward(
        &self,
        cert: &CertificatePair,
        k_bar: &ControlVec,
        jvp: Option<(&ControllerJvp, &ControlVec)>,
        g1: &mut Mlp,
        g2: &mut Mlp,
    ) {
        let kb = DVector::from_column_slice(k_bar.as_slice());
        let mut k2_bar = &kb * self.th.transpose();
        let mut t_bar = self.k2.tr_mul(&kb);
        let mut k1_bar;
        let mut tangent_bars = None;
        match jvp {
            Some((j, kdot_bar)) => {
                let kdb = DVector::from_column_slice(kdot_bar.as_slice());
                k2_bar += &kdb * j.tdot.transpose();
                let k2dot_bar = &kdb * self.th.transpose();
                t_bar += j.k2dot.tr_mul(&kdb);
                let tdot_bar = self.k2.tr_mul(&kdb);
                let mut zdot_bar = DVector::zeros(cert.rank);
                for a in 0..cert.rank {
                    let t = self.th[a];
                    zdot_bar[a] = (1.0 - t * t) * tdot_bar[a];
                    t_bar[a] += -2.0 * t * j.zdot[a] * tdot_bar[a];
                }
                let k1dot_bar = &zdot_bar * self.e.transpose();
                k1_bar = &zdot_bar * j.v.transpose();
                tangent_bars = Some((flatten(&k1dot_bar), flatten(&k2dot_bar)));
            }
            None => k1_bar = DMatrix::zeros(cert.rank, STATE_DIM),
        }
        let z_bar = t_bar.zip_map(&self.th, |b, t| b * (1.0 - t * t));
        k1_bar += &z_bar * self.e.transpose();
        let (y1, y2) = (flatten(&k1_bar), flatten(&k2_bar));
        match (jvp, tangent_bars) {
            (Some((j, _)), Some((d1, d2))) => {
                cert.k1_net.backward(&self.t1, Some(&y1), &[(&j.tan1, &d1)], g1);
                cert.k2_net.backward(&self.t2, Some(&y2), &[(&j.tan2, &d2)], g2);
            }
            _ => {
                cert.k1_net.backward(&self.t1, Some(&y1), &[], g1);
                cert.k2_net.backward(&self.t2, Some(&y2), &[], g2);
            }
        }
    }
}

/// Gradients for the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub l: Mlp,
    pub k1: Mlp,
    pub k2: Mlp,
}

impl NetGrads {
    pub fn zeros_like(cert: &CertificatePair) -> Self {
        Self { l: cert.l_net.zeros_like(), k1: cert.k1_net.zeros_like(), k2: cert.k2_net.zeros_like() }
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.l, &self.k1, &self.k2]
    }

    pub fn global_norm(&self) -> f64 {
        self.nets().iter().flat_map(|m| m.params()).flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Relative weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub contraction: f64,
    pub metric_bound: f64,
    pub dual_c1: f64,
    pub dual_c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { contraction: 1.0, metric_bound: 1.0, dual_c1: 1.0, dual_c2: 1.0 }
    }
}

/// Raw condition values at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerms {
    /// Largest eigenvalue of the contraction left-hand side.
    pub contraction: f64,
    /// Largest eigenvalue of `W - w_upper I`.
    pub metric_bound: f64,
    /// Largest eigenvalue of `C1`.
    pub dual_c1: f64,
    /// Sum of the Frobenius norms of the `C2_i`.
    pub dual_c2: f64,
}

/// Batch means of the hinge terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contraction: f64,
    pub metric_bound: f64,
    pub dual_c1: f64,
    pub dual_c2: f64,
    pub total: f64,
    /// Fraction of samples whose contraction eigenvalue is non-negative.
    pub violation_rate_eq11: f64,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub(crate) fn contraction_matrix(cert: &CertificatePair, s: &PreparedSample) -> Result<StateMat> {
    let me = MetricEval::new(cert, &s.x);
    let ce = ControllerEval::new(cert, &s.x, &s.x_star, &s.k_star);
    let xdot = s.jac.f + s.jac.g * ce.k;
    let (wdot, _) = me.wdot(cert, &xdot);
    let p = invert_spd(&me.w)?;
    let acl = s.jac.jacobian_a(&ce.k) + s.jac.g * ce.jacobian(cert);
    Ok(-p * wdot * p + sym(&(p * acl)) + p * (2.0 * cert.lambda))
}

pub(crate) fn dual_matrices(
    cert: &CertificatePair,
    x: &StateVec,
    jac: &PlantJacobians,
    g_ann: &Annihilator,
) -> (Mat9, [Mat9; DOF]) {
    let me = MetricEval::new(cert, x);
    let (wdot_f, _) = me.wdot(cert, &jac.f);
    let inner = -wdot_f + sym(&(jac.df * me.w)) + me.w * (2.0 * cert.lambda);
    let c1 = sym(&(g_ann.transpose() * inner * g_ann));
    let c2 = std::array::from_fn(|i| {
        let gi: StateVec = jac.g.column(i).into_owned();
        let (wdot_g, _) = me.wdot(cert, &gi);
        let dgi = jac.dg_column(i);
        g_ann.transpose() * (wdot_g - sym(&(dgi * me.w))) * g_ann
    });
    (c1, c2)
}

/// Evaluates the four conditions at one sample. When `grad` is given, the
/// gradient of `scale * weighted hinge loss` is accumulated into it.
pub fn sample_terms(
    cert: &CertificatePair,
    s: &PreparedSample,
    weights: &LossWeights,
    margin: f64,
    grad: Option<(&mut NetGrads, f64)>,
) -> Result<SampleTerms> {
    let lambda = cert.lambda;
    let me = MetricEval::new(cert, &s.x);
    let ce = ControllerEval::new(cert, &s.x, &s.x_star, &s.k_star);
    let gain = ce.jacobian(cert);
    let xdot = s.jac.f + s.jac.g * ce.k;
    let (wdot_x, tan_x) = me.wdot(cert, &xdot);
    let p = invert_spd(&me.w)?;
    let acl = s.jac.jacobian_a(&ce.k) + s.jac.g * gain;
    let smat = -p * wdot_x * p + sym(&(p * acl)) + p * (2.0 * lambda);
    let (eig11, v11) = max_eig(&smat);
    let (eig_w, v_w) = max_eig(&me.w);

    let (wdot_f, tan_f) = me.wdot(cert, &s.jac.f);
    let inner = -wdot_f + sym(&(s.jac.df * me.w)) + me.w * (2.0 * lambda);
    let c1 = sym(&(s.g_ann.transpose() * inner * s.g_ann));
    let (eig_c1, v_c1) = max_eig(&c1);

    let mut c2_total = 0.0;
    let mut c2_parts = Vec::with_capacity(DOF);
    for i in 0..DOF {
        let gi: StateVec = s.jac.g.column(i).into_owned();
        let (wdot_g, tan_g) = me.wdot(cert, &gi);
        let dgi = s.jac.dg_column(i);
        let c2 = s.g_ann.transpose() * (wdot_g - sym(&(dgi * me.w))) * s.g_ann;
        let fro = c2.norm();
        c2_total += fro;
        c2_parts.push((c2, fro, dgi, tan_g));
    }

    let terms =
        SampleTerms { contraction: eig11, metric_bound: eig_w - cert.w_upper, dual_c1: eig_c1, dual_c2: c2_total };
    let Some((grads, scale)) = grad else {
        return Ok(terms);
    };

    let mut w_bar = StateMat::zeros();
    let mut wdot_x_bar = StateMat::zeros();
    let mut k_bar = ControlVec::zeros();
    let mut kdot_bar = None;

    let coef = scale * weights.contraction;
    if coef != 0.0 && eig11 + margin > 0.0 {
        let pv = p * v11;
        let sv = p * (wdot_x * pv);
        let qv = p * (acl * v11);
        w_bar += (pv * sv.transpose() + sv * pv.transpose()
            - (pv * qv.transpose() + qv * pv.transpose()) * 0.5
            - pv * pv.transpose() * (2.0 * lambda))
            * coef;
        wdot_x_bar -= pv * pv.transpose() * coef;
        for (c, dgc) in s.jac.dg.iter().enumerate() {
            if v11[c] != 0.0 {
                k_bar += dgc.tr_mul(&pv) * (v11[c] * coef);
            }
        }
        kdot_bar = Some(s.jac.g.tr_mul(&pv) * coef);
    }

    let coef = scale * weights.metric_bound;
    if coef != 0.0 && terms.metric_bound + margin > 0.0 {
        w_bar += v_w * v_w.transpose() * coef;
    }

    let mut wdot_f_bar = StateMat::zeros();
    let coef = scale * weights.dual_c1;
    if coef != 0.0 && eig_c1 + margin > 0.0 {
        let y = s.g_ann * v_c1;
        let yy = y * y.transpose();
        w_bar += (sym(&(s.jac.df.transpose() * yy)) + yy * (2.0 * lambda)) * coef;
        wdot_f_bar -= yy * coef;
    }

    let mut wdot_g_bars: Vec<Option<StateMat>> = vec![None; DOF];
    let coef = scale * weights.dual_c2;
    if coef != 0.0 {
        for (i, (c2, fro, dgi, _)) in c2_parts.iter().enumerate() {
            if *fro > 1e-12 {
                let nt = s.g_ann * (c2 / *fro) * s.g_ann.transpose();
                wdot_g_bars[i] = Some(nt * coef);
                w_bar -= sym(&(dgi.transpose() * nt)) * coef;
            }
        }
    }

    // Reverse through W = L^T L + w I and W' = L'^T L + L^T L'.
    let mut items: Vec<(&(MlpTangent, StateMat), StateMat, bool)> = Vec::new();
    if let Some(t) = &tan_x {
        items.push((t, wdot_x_bar, true));
    }
    if let Some(t) = &tan_f {
        items.push((t, wdot_f_bar, false));
    }
    for (part, d) in c2_parts.iter().zip(&wdot_g_bars) {
        if let (Some(t), Some(d)) = (&part.3, d) {
            items.push((t, *d, false));
        }
    }
    let mut l_bar = me.l * w_bar * 2.0;
    let mut ldot_bars = Vec::with_capacity(items.len());
    for ((_, ldot), d, _) in &items {
        l_bar += ldot * d * 2.0;
        ldot_bars.push(flatten_square(&(me.l * d * 2.0)));
    }
    let tangent_refs: Vec<(&MlpTangent, &DVector<f64>)> =
        items.iter().zip(&ldot_bars).map(|((t, _, _), d)| (&t.0, d)).collect();
    let dir_bars = cert.l_net.backward(&me.tape, Some(&flatten_square(&l_bar)), &tangent_refs, &mut grads.l);
    if let Some(slot) = items.iter().position(|item| item.2) {
        let mut xdot_bar = StateVec::zeros();
        for (i, idx) in cert.metric_input.range().enumerate() {
            xdot_bar[idx] = dir_bars[slot][i];
        }
        k_bar += s.jac.g.tr_mul(&xdot_bar);
    }

    let jvp = kdot_bar.as_ref().map(|_| ce.jvp(cert, &v11));
    let jvp_pair = jvp.as_ref().zip(kdot_bar.as_ref());
    ce.backward(cert, &k_bar, jvp_pair, &mut grads.k1, &mut grads.k2);
    Ok(terms)
}

impl LossBreakdown {
    fn accumulate(&mut self, t: &SampleTerms, margin: f64) {
        self.contraction += relu(t.contraction + margin);
        self.metric_bound += relu(t.metric_bound + margin);
        self.dual_c1 += relu(t.dual_c1 + margin);
        self.dual_c2 += t.dual_c2;
        if t.contraction >= 0.0 {
            self.violation_rate_eq11 += 1.0;
        }
    }

    fn finish(&mut self, n: usize, w: &LossWeights) {
        let inv = 1.0 / n as f64;
        self.contraction *= inv;
        self.metric_bound *= inv;
        self.dual_c1 *= inv;
        self.dual_c2 *= inv;
        self.violation_rate_eq11 *= inv;
        self.total = w.contraction * self.contraction
            + w.metric_bound * self.metric_bound
            + w.dual_c1 * self.dual_c1
            + w.dual_c2 * self.dual_c2;
    }
}

/// Mean weighted hinge loss over `batch` and, when `with_grad`, its gradient.
pub fn loss_and_gradient(
    cert: &CertificatePair,
    batch: &[PreparedSample],
    weights: &LossWeights,
    margin: f64,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<NetGrads>)> {
    let mut out = LossBreakdown::default();
    if batch.is_empty() {
        return Ok((out, with_grad.then(|| NetGrads::zeros_like(cert))));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = with_grad.then(|| NetGrads::zeros_like(cert));
    for s in batch {
        let t = sample_terms(cert, s, weights, margin, grads.as_mut().map(|g| (g, scale)))?;
        out.accumulate(&t, margin);
    }
    out.finish(batch.len(), weights);
    Ok((out, grads))
}
