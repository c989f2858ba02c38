//! Neural control contraction metric.
//!
//! The dual metric is `W(x) = L(x)^T L(x) + w_lower I` with `L` the reshaped
//! output of a two-layer network, and the controller is
//! `k = K2 tanh(K1 (x - x*)) + k*` with `K1`, `K2` produced by two more
//! networks. Training penalises violations of the contraction condition,
//! the metric upper bound and the dual conditions on sampled states.

mod conditions;
pub mod mlp;
mod train;
mod verify;

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FullState, PlantJacobians, SystemParams};
use crate::math::sym;
use crate::{ControlVec, Error, Result, StateMat, StateVec, DOF, STATE_DIM};

pub use conditions::{
    loss_and_gradient, sample_terms, LossBreakdown, LossWeights, NetGrads, PreparedSample, SampleTerms,
};
pub use mlp::{Mlp, MlpFile, NamedArray};
pub use train::{
    sample_training_states, train, train_with_callback, EpochStats, SamplingConfig, TrainConfig, TrainOutcome,
};
pub use verify::{verify, verify_with, DualResiduals, EigenQuantiles, MaxEigQuantiles, VerificationReport};

/// Matrix of the dual-condition annihilator (orthonormal basis of `null(G^T)`).
pub type Annihilator = SMatrix<f64, STATE_DIM, DOF>;
/// `K = dk/dx`.
pub type GainMatrix = SMatrix<f64, DOF, STATE_DIM>;

/// Number of controller-network inputs: the tracking error followed by the
/// reference with its (translation-invariant) payload position dropped.
pub const CONTROLLER_INPUT: usize = STATE_DIM + STATE_DIM - 3;

/// State coordinates the metric network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricInput {
    /// Cable projections `r_1..r_3`.
    #[default]
    Cables,
    /// Payload position and cable projections.
    Configuration,
    /// Entire state.
    Full,
}

impl MetricInput {
    pub fn range(self) -> Range<usize> {
        match self {
            MetricInput::Cables => 3..9,
            MetricInput::Configuration => 0..9,
            MetricInput::Full => 0..STATE_DIM,
        }
    }

    pub fn dim(self) -> usize {
        self.range().len()
    }
}

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub hidden: usize,
    /// Rows of `K1` (inner dimension of the controller).
    pub rank: usize,
    pub metric_input: MetricInput,
    /// Initial `L` is `l_init * I` plus a random perturbation.
    pub l_init: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { hidden: 128, rank: 16, metric_input: MetricInput::Cables, l_init: 1.0 }
    }
}

/// Scalars shared by the certificate and its training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConstants {
    pub w_lower: f64,
    pub w_upper: f64,
    pub lambda: f64,
    pub a: f64,
    pub f_b: f64,
}

impl Default for CertificateConstants {
    fn default() -> Self {
        Self { w_lower: 0.1, w_upper: 10.0, lambda: 0.1, a: 0.3, f_b: 3.0 }
    }
}

impl CertificateConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.w_lower > 0.0) {
            return bad("w_lower must be positive");
        }
        if !(self.w_upper > self.w_lower) {
            return bad("w_upper must exceed w_lower");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.f_b > 0.0) {
            return bad("f_b must be positive");
        }
        if !(self.a > 0.0) {
            return bad("saturation factor a must be positive");
        }
        Ok(())
    }
}

/// Dual metric network and controller networks with their scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificatePair {
    pub l_net: Mlp,
    pub k1_net: Mlp,
    pub k2_net: Mlp,
    pub w_lower: f64,
    pub w_upper: f64,
    pub lambda: f64,
    pub a: f64,
    pub f_b: f64,
    pub metric_input: MetricInput,
    pub rank: usize,
    pub seed: Option<u64>,
    pub train_config: Option<TrainConfig>,
}

impl CertificatePair {
    /// Random initialisation.
    pub fn init<R: Rng>(arch: &Architecture, constants: &CertificateConstants, rng: &mut R) -> Result<Self> {
        constants.validate()?;
        if arch.hidden == 0 || arch.rank == 0 {
            return Err(Error::InvalidConfig("network sizes must be positive".into()));
        }
        let mut l_net = Mlp::new(arch.metric_input.dim(), arch.hidden, STATE_DIM * STATE_DIM, 0.1, rng);
        for i in 0..STATE_DIM {
            l_net.b2[i * STATE_DIM + i] = arch.l_init;
        }
        let k1_net = Mlp::new(CONTROLLER_INPUT, arch.hidden, arch.rank * STATE_DIM, 1.0, rng);
        let k2_net = Mlp::new(CONTROLLER_INPUT, arch.hidden, DOF * arch.rank, 1.0, rng);
        Ok(Self::from_parts(l_net, k1_net, k2_net, constants, arch.metric_input, arch.rank))
    }

    pub fn from_parts(
        l_net: Mlp,
        k1_net: Mlp,
        k2_net: Mlp,
        constants: &CertificateConstants,
        metric_input: MetricInput,
        rank: usize,
    ) -> Self {
        Self {
            l_net,
            k1_net,
            k2_net,
            w_lower: constants.w_lower,
            w_upper: constants.w_upper,
            lambda: constants.lambda,
            a: constants.a,
            f_b: constants.f_b,
            metric_input,
            rank,
            seed: None,
            train_config: None,
        }
    }

    pub fn constants(&self) -> CertificateConstants {
        CertificateConstants {
            w_lower: self.w_lower,
            w_upper: self.w_upper,
            lambda: self.lambda,
            a: self.a,
            f_b: self.f_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants().validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.l_net.input_dim() != self.metric_input.dim() || self.l_net.output_dim() != STATE_DIM * STATE_DIM {
            return bad("metric network shape mismatch");
        }
        if self.k1_net.input_dim() != CONTROLLER_INPUT || self.k1_net.output_dim() != self.rank * STATE_DIM {
            return bad("K1 network shape mismatch");
        }
        if self.k2_net.input_dim() != CONTROLLER_INPUT || self.k2_net.output_dim() != DOF * self.rank {
            return bad("K2 network shape mismatch");
        }
        if !(self.l_net.is_finite() && self.k1_net.is_finite() && self.k2_net.is_finite()) {
            return bad("non-finite weights");
        }
        Ok(())
    }

    pub fn to_file(&self) -> WeightFile {
        WeightFile {
            format: WEIGHT_FORMAT.to_string(),
            metric_input: self.metric_input,
            rank: self.rank,
            constants: self.constants(),
            l_net: MlpFile::from(&self.l_net),
            k1_net: MlpFile::from(&self.k1_net),
            k2_net: MlpFile::from(&self.k2_net),
            seed: self.seed,
            train_config: self.train_config.clone(),
        }
    }

    pub fn from_file(file: WeightFile) -> Result<Self> {
        if file.format != WEIGHT_FORMAT {
            return Err(Error::InvalidConfig(format!("unsupported weight format '{}'", file.format)));
        }
        let net = |m: &MlpFile, name: &str| {
            m.to_mlp().ok_or_else(|| Error::InvalidConfig(format!("malformed arrays in {name}")))
        };
        let mut cert = Self::from_parts(
            net(&file.l_net, "l_net")?,
            net(&file.k1_net, "k1_net")?,
            net(&file.k2_net, "k2_net")?,
            &file.constants,
            file.metric_input,
            file.rank,
        );
        cert.seed = file.seed;
        cert.train_config = file.train_config;
        cert.validate()?;
        Ok(cert)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const WEIGHT_FORMAT: &str = "slungload-ccm-v1";

/// Serialized form of [`CertificatePair`]; arrays are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format: String,
    pub metric_input: MetricInput,
    pub rank: usize,
    #[serde(flatten)]
    pub constants: CertificateConstants,
    pub l_net: MlpFile,
    pub k1_net: MlpFile,
    pub k2_net: MlpFile,
    pub seed: Option<u64>,
    pub train_config: Option<TrainConfig>,
}

pub(crate) fn metric_features(cert: &CertificatePair, x: &StateVec) -> DVector<f64> {
    DVector::from_column_slice(&x.as_slice()[cert.metric_input.range()])
}

pub(crate) fn controller_features(x: &StateVec, x_star: &StateVec) -> DVector<f64> {
    let mut v = DVector::zeros(CONTROLLER_INPUT);
    for i in 0..STATE_DIM {
        v[i] = x[i] - x_star[i];
    }
    for i in 3..STATE_DIM {
        v[STATE_DIM + i - 3] = x_star[i];
    }
    v
}

/// `L(x)` (row-major reshape of the metric network output).
pub fn metric_factor(cert: &CertificatePair, x: &FullState) -> StateMat {
    StateMat::from_row_slice(cert.l_net.eval(metric_features(cert, x.as_vector())).as_slice())
}

/// `W(x) = L^T L + w_lower I`.
pub fn dual_metric(cert: &CertificatePair, x: &FullState) -> StateMat {
    let l = metric_factor(cert, x);
    l.transpose() * l + StateMat::identity() * cert.w_lower
}

/// `P = W^{-1}`.
pub fn metric_p(cert: &CertificatePair, x: &FullState) -> Result<StateMat> {
    invert_spd(&dual_metric(cert, x))
}

pub(crate) fn invert_spd(w: &StateMat) -> Result<StateMat> {
    let chol = w.cholesky().ok_or(Error::SolveFailure("dual metric is not positive definite"))?;
    Ok(sym(&chol.inverse()))
}

/// Unsaturated control `k = K2 tanh(K1 (x - x*)) + k*`.
pub fn controller(cert: &CertificatePair, x: &FullState, x_star: &FullState, k_star: &ControlVec) -> ControlVec {
    conditions::ControllerEval::new(cert, x.as_vector(), x_star.as_vector(), k_star).k
}

/// `zeta = tanh(a k(x, x*, 0)) f_b + k*` elementwise.
pub fn saturated_controller(
    cert: &CertificatePair,
    x: &FullState,
    x_star: &FullState,
    k_star: &ControlVec,
) -> ControlVec {
    let k = controller(cert, x, x_star, &ControlVec::zeros());
    k.map(|v| (cert.a * v).tanh() * cert.f_b) + k_star
}

/// `K = dk/dx` of the unsaturated controller.
pub fn controller_jacobian(
    cert: &CertificatePair,
    x: &FullState,
    x_star: &FullState,
    k_star: &ControlVec,
) -> GainMatrix {
    conditions::ControllerEval::new(cert, x.as_vector(), x_star.as_vector(), k_star).jacobian(cert)
}

/// `A = df/dx + sum_i dg_i/dx k_i` with the unsaturated control.
pub fn jacobian_a(
    params: &SystemParams,
    cert: &CertificatePair,
    x: &FullState,
    x_star: &FullState,
    k_star: &ControlVec,
) -> Result<StateMat> {
    let jac = crate::dynamics::plant_jacobians(params, x)?;
    Ok(jac.jacobian_a(&controller(cert, x, x_star, k_star)))
}

/// Directional derivative `sum_k dW/dx_k v_k`.
pub fn metric_derivative(cert: &CertificatePair, x: &FullState, v: &StateVec) -> StateMat {
    let me = conditions::MetricEval::new(cert, x.as_vector());
    me.wdot(cert, v).0
}

/// Left-hand side of the contraction condition
/// `P' + sym(P (A + G K)) + 2 lambda P` along the closed-loop field.
pub fn contraction_lhs(params: &SystemParams, cert: &CertificatePair, sample: &TrainSample) -> Result<StateMat> {
    let prepared = PreparedSample::new(params, sample)?;
    conditions::contraction_matrix(cert, &prepared)
}

/// Orthonormal basis of `null(G^T)`.
pub fn annihilator(g: &SMatrix<f64, STATE_DIM, DOF>) -> Result<Annihilator> {
    let sv = g.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(f64::MIN_POSITIVE)).count();
    if rank < DOF || !(smax > 0.0) {
        return Err(Error::RankDeficient { rank: if smax > 0.0 { rank } else { 0 }, expected: DOF });
    }
    let mut aug = DMatrix::zeros(STATE_DIM, DOF + STATE_DIM);
    aug.view_mut((0, 0), (STATE_DIM, DOF)).copy_from(g);
    aug.view_mut((0, DOF), (STATE_DIM, STATE_DIM)).fill_diagonal(1.0);
    let q = aug.qr().q();
    Ok(Annihilator::from_fn(|r, c| q[(r, DOF + c)]))
}

/// Dual conditions: `C1` (must be negative definite) and the nine `C2_i`
/// (must vanish).
pub fn dual_conditions(
    params: &SystemParams,
    cert: &CertificatePair,
    x: &FullState,
) -> Result<(SMatrix<f64, DOF, DOF>, [SMatrix<f64, DOF, DOF>; DOF])> {
    let jac = crate::dynamics::plant_jacobians(params, x)?;
    let g_ann = annihilator(&jac.g)?;
    Ok(conditions::dual_matrices(cert, x.as_vector(), &jac, &g_ann))
}

/// One training/verification point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub x: FullState,
    pub x_star: FullState,
    pub k_star: ControlVec,
}

impl TrainSample {
    pub fn check(&self, params: &SystemParams) -> Result<()> {
        self.x.check_guard(params)?;
        self.x_star.check_guard(params)
    }
}

impl PreparedSample {
    pub fn new(params: &SystemParams, sample: &TrainSample) -> Result<Self> {
        sample.check(params)?;
        let jac: PlantJacobians = crate::dynamics::plant_jacobians(params, &sample.x)?;
        let g_ann = annihilator(&jac.g)?;
        Ok(Self { x: sample.x.0, x_star: sample.x_star.0, k_star: sample.k_star, jac, g_ann })
    }
}
