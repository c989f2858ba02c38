//! Two-layer fully connected network `y = W2 tanh(W1 x + b1) + b2` with
//! forward-mode tangents and a reverse pass that also propagates tangent
//! adjoints (needed when a loss depends on input-directional derivatives of
//! the network).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Values kept from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub input: DVector<f64>,
    pub hidden: DVector<f64>,
    pub output: DVector<f64>,
}

/// Directional derivative of the output along an input direction.
#[derive(Debug, Clone)]
pub struct MlpTangent {
    pub direction: DVector<f64>,
    /// `W1 dx`
    pre: DVector<f64>,
    /// `(1 - h^2) * W1 dx`
    pub hidden: DVector<f64>,
    pub output: DVector<f64>,
}

impl Mlp {
    /// Uniform Glorot initialisation of both layers, zero biases. The output
    /// layer is further scaled by `output_scale`.
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, output_scale: f64, rng: &mut R) -> Self {
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + output) as f64).sqrt() * output_scale;
        let w1 = DMatrix::from_fn(hidden, input, |_, _| rng.random_range(-b1..b1));
        let w2 = DMatrix::from_fn(output, hidden, |_, _| rng.random_range(-b2..b2));
        Self { w1, b1: DVector::zeros(hidden), w2, b2: DVector::zeros(output) }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(output, hidden),
            b2: DVector::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn params(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()]
    }

    pub fn forward(&self, input: DVector<f64>) -> MlpTape {
        let mut hidden = &self.w1 * &input + &self.b1;
        hidden.apply(|v| *v = v.tanh());
        let output = &self.w2 * &hidden + &self.b2;
        MlpTape { input, hidden, output }
    }

    pub fn eval(&self, input: DVector<f64>) -> DVector<f64> {
        self.forward(input).output
    }

    pub fn tangent(&self, tape: &MlpTape, direction: DVector<f64>) -> MlpTangent {
        let pre = &self.w1 * &direction;
        let hidden = pre.zip_map(&tape.hidden, |a, h| (1.0 - h * h) * a);
        let output = &self.w2 * &hidden;
        MlpTangent { direction, pre, hidden, output }
    }

    /// Jacobian of the hidden-layer contribution restricted to the first
    /// `n_cols` inputs: `diag(1 - h^2) W1[:, ..n_cols]` (hidden x n_cols).
    pub fn hidden_jacobian(&self, tape: &MlpTape, n_cols: usize) -> DMatrix<f64> {
        let mut j = self.w1.columns(0, n_cols).into_owned();
        for (mut row, h) in j.row_iter_mut().zip(tape.hidden.iter()) {
            row *= 1.0 - h * h;
        }
        j
    }

    /// Accumulates parameter gradients into `grad` given the adjoint of the
    /// output (`output_bar`) and, for each tangent, the adjoint of its output.
    /// Returns the adjoint of every tangent's input direction.
    pub fn backward(
        &self,
        tape: &MlpTape,
        output_bar: Option<&DVector<f64>>,
        tangents: &[(&MlpTangent, &DVector<f64>)],
        grad: &mut Mlp,
    ) -> Vec<DVector<f64>> {
        let mut hidden_bar = DVector::zeros(self.hidden_dim());
        if let Some(ybar) = output_bar {
            grad.w2.ger(1.0, ybar, &tape.hidden, 1.0);
            grad.b2 += ybar;
            hidden_bar.gemv_tr(1.0, &self.w2, ybar, 0.0);
        }
        let mut dir_bars = Vec::with_capacity(tangents.len());
        for (tan, dybar) in tangents {
            grad.w2.ger(1.0, dybar, &tan.hidden, 1.0);
            let mut dh_bar = DVector::zeros(self.hidden_dim());
            dh_bar.gemv_tr(1.0, &self.w2, dybar, 0.0);
            // dh = s * a with s = 1 - h^2, a = W1 dx
            let mut a_bar = DVector::zeros(self.hidden_dim());
            for i in 0..self.hidden_dim() {
                let h = tape.hidden[i];
                let s = 1.0 - h * h;
                a_bar[i] = s * dh_bar[i];
                hidden_bar[i] += -2.0 * h * tan.pre[i] * dh_bar[i];
            }
            grad.w1.ger(1.0, &a_bar, &tan.direction, 1.0);
            let mut dx_bar = DVector::zeros(self.input_dim());
            dx_bar.gemv_tr(1.0, &self.w1, &a_bar, 0.0);
            dir_bars.push(dx_bar);
        }
        let pre_bar = hidden_bar.zip_map(&tape.hidden, |b, h| b * (1.0 - h * h));
        grad.w1.ger(1.0, &pre_bar, &tape.input, 1.0);
        grad.b1 += &pre_bar;
        dir_bars
    }
}

/// Row-major named array used in weight files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        Self { shape: vec![m.nrows(), m.ncols()], data }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { shape: vec![v.len()], data: v.as_slice().to_vec() }
    }

    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        match self.shape.as_slice() {
            [r, c] if r * c == self.data.len() => Some(DMatrix::from_row_slice(*r, *c, &self.data)),
            _ => None,
        }
    }

    pub fn to_vector(&self) -> Option<DVector<f64>> {
        match self.shape.as_slice() {
            [n] if *n == self.data.len() => Some(DVector::from_column_slice(&self.data)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub w1: NamedArray,
    pub b1: NamedArray,
    pub w2: NamedArray,
    pub b2: NamedArray,
}

impl From<&Mlp> for MlpFile {
    fn from(m: &Mlp) -> Self {
        Self {
            w1: NamedArray::from_matrix(&m.w1),
            b1: NamedArray::from_vector(&m.b1),
            w2: NamedArray::from_matrix(&m.w2),
            b2: NamedArray::from_vector(&m.b2),
        }
    }
}

impl MlpFile {
    pub fn to_mlp(&self) -> Option<Mlp> {
        let m = Mlp {
            w1: self.w1.to_matrix()?,
            b1: self.b1.to_vector()?,
            w2: self.w2.to_matrix()?,
            b2: self.b2.to_vector()?,
        };
        let ok = m.b1.len() == m.w1.nrows() && m.w2.ncols() == m.w1.nrows() && m.b2.len() == m.w2.nrows();
        ok.then_some(m)
    }
}
