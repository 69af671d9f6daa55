//! Continuous-time cell dynamics: Neural ODE, CT-RNN and liquid time-constant
//! (LTC) derivative fields sharing one neural nonlinearity
//! `f = act(x·γ_r + I·γ + μ)`.
//!
//! Vectors are rows: `γ` is `m x n` and `γ_r` is `n x n`, so neuron `i` sees
//! `sum_j x_j γ_r[j, i] + sum_k I_k γ[k, i] + μ_i`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gaussian_vec_from, Matrix};
use crate::solvers::Dynamics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    HardTanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::HardTanh];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::HardTanh => z.clamp(-1.0, 1.0),
        }
    }

    /// Derivative with respect to the pre-activation. Kinks take the
    /// one-sided value of the flat region.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::HardTanh => {
                if z.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True when the activation is strictly positive and bounded by 1.
    pub fn is_bounded_positive(self) -> bool {
        self == Activation::Sigmoid
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::HardTanh => "hard-tanh",
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" | "logistic" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "hard-tanh" | "hardtanh" => Ok(Activation::HardTanh),
            other => Err(Error::Parameter(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    NeuralOde,
    CtRnn,
    Ltc,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::NeuralOde, CellKind::CtRnn, CellKind::Ltc];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::NeuralOde => "neural-ode",
            CellKind::CtRnn => "ct-rnn",
            CellKind::Ltc => "ltc",
        }
    }

    pub fn uses_tau(self) -> bool {
        self != CellKind::NeuralOde
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "neural-ode" | "node" => Ok(CellKind::NeuralOde),
            "ct-rnn" | "ctrnn" => Ok(CellKind::CtRnn),
            "ltc" => Ok(CellKind::Ltc),
            other => Err(Error::Parameter(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Learnable parameters of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub n: usize,
    pub m: usize,
    /// Per-neuron time constant, strictly positive.
    pub tau: Vec<f64>,
    /// Input weights, `m x n`.
    pub gamma: Matrix,
    /// Recurrent weights, `n x n`.
    pub gamma_r: Matrix,
    pub mu: Vec<f64>,
    /// LTC bias vector `A`; bounds the reachable state box for positive `f`.
    pub a: Vec<f64>,
    pub activation: Activation,
}

impl CellParams {
    pub fn zeros(n: usize, m: usize, activation: Activation) -> Self {
        Self {
            n,
            m,
            tau: vec![1.0; n],
            gamma: Matrix::zeros(m, n),
            gamma_r: Matrix::zeros(n, n),
            mu: vec![0.0; n],
            a: vec![0.0; n],
            activation,
        }
    }

    /// Training initialization: `γ ~ N(0, 1/m)`, `γ_r ~ N(0, 1/n)`, `μ = 0`,
    /// `τ ~ U[0.5, 2]`, `A ~ N(0, 1)`.
    pub fn init_for_training<R: Rng + ?Sized>(n: usize, m: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let gamma = Matrix::new(m, n, gaussian_vec_from(rng, m * n, 0.0, 1.0 / m.max(1) as f64)?)?;
        let gamma_r = Matrix::new(n, n, gaussian_vec_from(rng, n * n, 0.0, 1.0 / n.max(1) as f64)?)?;
        let tau = (0..n).map(|_| rng.random_range(0.5..=2.0_f64).max(1e-6)).collect();
        let a = gaussian_vec_from(rng, n, 0.0, 1.0)?;
        Ok(Self { n, m, tau, gamma, gamma_r, mu: vec![0.0; n], a, activation })
    }

    /// Random-network initialization used by the expressivity laboratory:
    /// all weights `~ N(0, σ_w²/k)` with `k = n`, biases `μ` and `A ~ N(0, σ_b²)`,
    /// `τ ~ U[0.5, 2]`.
    ///
    /// Draw order is fixed (standard normals for weights, then biases, then
    /// `τ`), so changing only the variances rescales the same draw.
    pub fn init_random_network<R: Rng + ?Sized>(
        n: usize,
        m: usize,
        activation: Activation,
        weight_variance: f64,
        bias_variance: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let wv = weight_variance / n as f64;
        let gamma = Matrix::new(m, n, gaussian_vec_from(rng, m * n, 0.0, wv)?)?;
        let gamma_r = Matrix::new(n, n, gaussian_vec_from(rng, n * n, 0.0, wv)?)?;
        let mu = gaussian_vec_from(rng, n, 0.0, bias_variance)?;
        let a = gaussian_vec_from(rng, n, 0.0, bias_variance)?;
        let tau = (0..n).map(|_| rng.random_range(0.5..=2.0_f64)).collect();
        Ok(Self { n, m, tau, gamma, gamma_r, mu, a, activation })
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if self.tau.len() != n || self.mu.len() != n || self.a.len() != n {
            return Err(Error::Shape(format!("per-neuron vectors must have length n = {n}")));
        }
        if self.gamma.rows() != m || self.gamma.cols() != n {
            return Err(Error::Shape(format!("gamma must be {m}x{n}, is {}x{}", self.gamma.rows(), self.gamma.cols())));
        }
        if self.gamma_r.rows() != n || self.gamma_r.cols() != n {
            return Err(Error::Shape(format!("gamma_r must be {n}x{n}")));
        }
        if let Some(i) = self.tau.iter().position(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Parameter(format!("tau[{i}] = {} must be positive and finite", self.tau[i])));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.mu) || !finite(&self.a) || !finite(self.gamma.data()) || !finite(self.gamma_r.data()) {
            return Err(Error::Parameter("non-finite cell parameter".into()));
        }
        Ok(())
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        3 * self.n + self.gamma.data().len() + self.gamma_r.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub(crate) fn check_shapes(&self, x: &[f64], input: &[f64]) -> Result<()> {
        if x.len() != self.n || input.len() != self.m {
            return Err(Error::Shape(format!(
                "state/input lengths ({}, {}) do not match cell (n = {}, m = {})",
                x.len(),
                input.len(),
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    #[inline]
    fn check_tau(&self) -> Result<()> {
        match self.tau.iter().position(|t| !(*t > 0.0)) {
            Some(i) => Err(Error::Parameter(format!("tau[{i}] = {} must be positive", self.tau[i]))),
            None => Ok(()),
        }
    }

    /// Writes `x·γ_r + I·γ + μ` into `out`.
    #[inline]
    pub fn pre_activation_into(&self, x: &[f64], input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.mu);
        self.gamma_r.accumulate_vec_mul(x, out);
        self.gamma.accumulate_vec_mul(input, out);
    }

    #[inline]
    pub(crate) fn f_into(&self, x: &[f64], input: &[f64], out: &mut [f64]) {
        self.pre_activation_into(x, input, out);
        for v in out.iter_mut() {
            *v = self.activation.apply(*v);
        }
    }
}

/// The shared nonlinearity `act(x·γ_r + I·γ + μ)`.
pub fn neural_net_f(x: &[f64], input: &[f64], params: &CellParams) -> Result<Vec<f64>> {
    params.check_shapes(x, input)?;
    let mut out = vec![0.0; params.n];
    params.f_into(x, input, &mut out);
    Ok(out)
}

/// `dx/dt = f(x, I)`.
pub fn node_derivative(x: &[f64], input: &[f64], params: &CellParams) -> Result<Vec<f64>> {
    neural_net_f(x, input, params)
}

/// `dx/dt = -x/τ + f(x, I)`.
pub fn ctrnn_derivative(x: &[f64], input: &[f64], params: &CellParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.n];
    derivative_into(CellKind::CtRnn, params, x, input, &mut out)?;
    Ok(out)
}

/// `dx/dt = -(1/τ + f) ⊙ x + f ⊙ A`.
pub fn ltc_derivative(x: &[f64], input: &[f64], params: &CellParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.n];
    derivative_into(CellKind::Ltc, params, x, input, &mut out)?;
    Ok(out)
}

pub fn derivative_into(kind: CellKind, params: &CellParams, x: &[f64], input: &[f64], out: &mut [f64]) -> Result<()> {
    params.check_shapes(x, input)?;
    if kind.uses_tau() {
        params.check_tau()?;
    }
    params.f_into(x, input, out);
    match kind {
        CellKind::NeuralOde => {}
        CellKind::CtRnn => {
            for i in 0..params.n {
                out[i] -= x[i] / params.tau[i];
            }
        }
        CellKind::Ltc => {
            for i in 0..params.n {
                let f = out[i];
                out[i] = -(1.0 / params.tau[i] + f) * x[i] + f * params.a[i];
            }
        }
    }
    Ok(())
}

/// Effective LTC time constant `τ / (1 + τ f)`, coordinate-wise.
pub fn instantaneous_time_constant(x: &[f64], input: &[f64], params: &CellParams) -> Result<Vec<f64>> {
    let f = neural_net_f(x, input, params)?;
    time_constant_from_f(&params.tau, &f)
}

pub fn time_constant_from_f(tau: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    tau.iter()
        .zip(f)
        .enumerate()
        .map(|(i, (&t, &fi))| {
            let d = 1.0 + t * fi;
            if d <= 0.0 {
                Err(Error::Singularity { coordinate: i, value: d })
            } else {
                Ok(t / d)
            }
        })
        .collect()
}

/// A cell kind bound to its parameters; the vector field integrated by the
/// solvers.
#[derive(Debug, Clone, Copy)]
pub struct Cell<'a> {
    pub kind: CellKind,
    pub params: &'a CellParams,
}

impl<'a> Cell<'a> {
    pub fn new(kind: CellKind, params: &'a CellParams) -> Self {
        Self { kind, params }
    }
}

impl Dynamics for Cell<'_> {
    fn dim(&self) -> usize {
        self.params.n
    }

    fn derivative_into(&self, x: &[f64], input: &[f64], out: &mut [f64]) -> Result<()> {
        derivative_into(self.kind, self.params, x, input, out)
    }
}
