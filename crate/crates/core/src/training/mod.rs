//! Training by backpropagation through the unrolled solver.
//!
//! Memory is `O(L x T)` per sequence (every solver sub-step is cached) and the
//! backward pass costs about as much as the forward pass; there is no adjoint
//! integration.

mod bptt;
mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use bptt::{bptt_gradients, forward_unroll, predict, ForwardCache, ForwardPass, Gradients};
pub use checkpoint::{
    checkpoint_from_str, checkpoint_load, checkpoint_save, checkpoint_to_string, Checkpoint, DataSpec,
    CHECKPOINT_FORMAT_VERSION,
};
pub use loss::{loss_eval, loss_gradient_step, metric_eval, LossKind, MetricKind};
pub use optim::{adam_update, clip_global_norm, sgd_update, AdamConfig, AdamState, TAU_FLOOR};
pub use trainer::{evaluate, train_loop, EpochMetrics, TrainOutcome};

use crate::cells::{Activation, CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngSeed};
use crate::solvers::SolverKind;

/// Linear readout `y = x·W_out + b_out`, with `W_out` of shape `n x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl OutputHead {
    pub fn zeros(n: usize, outputs: usize) -> Self {
        Self { w_out: Matrix::zeros(n, outputs), b_out: vec![0.0; outputs] }
    }

    pub fn outputs(&self) -> usize {
        self.b_out.len()
    }

    pub fn readout(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b_out.clone();
        self.w_out.accumulate_vec_mul(x, &mut y);
        y
    }
}

/// Per-step supervision of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Real-valued targets, one vector per step.
    Values(Vec<Vec<f64>>),
    /// Class labels, one per step.
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One training example: an input sequence with aligned targets. Steps whose
/// mask entry is false are excluded from the loss (padding).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
    pub mask: Vec<bool>,
}

impl Sequence {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Targets) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!("{} input steps but {} target steps", inputs.len(), targets.len())));
        }
        let mask = vec![true; inputs.len()];
        Ok(Self { inputs, targets, mask })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Zero-pads to `len` steps; padded steps are masked out.
    pub fn padded(&self, len: usize) -> Sequence {
        let mut s = self.clone();
        let extra = len.saturating_sub(s.len());
        let m = s.inputs.first().map_or(0, Vec::len);
        s.inputs.extend(std::iter::repeat_n(vec![0.0; m], extra));
        match &mut s.targets {
            Targets::Values(v) => {
                let o = v.first().map_or(0, Vec::len);
                v.extend(std::iter::repeat_n(vec![0.0; o], extra));
            }
            Targets::Labels(l) => l.extend(std::iter::repeat_n(0, extra)),
        }
        s.mask.extend(std::iter::repeat_n(false, extra));
        s
    }
}

/// Hyperparameters. Defaults follow the reference experimental setup: 32
/// units, minibatch 16, 6 solver sub-steps per sample, BPTT windows of 32
/// and 200 epochs with Adam(0.9, 0.999, 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub hidden_units: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Solver sub-steps per input sample (`L`).
    pub solver_substeps: usize,
    /// Input sampling period; the solver step is `sample_period / L`.
    pub sample_period: f64,
    pub bptt_length: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub metric: MetricKind,
    pub solver: SolverKind,
    pub activation: Activation,
    /// Global gradient-norm clipping threshold.
    pub grad_clip: f64,
    pub seed: RngSeed,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden_units: 32,
            minibatch: 16,
            learning_rate: 0.01,
            solver_substeps: 6,
            sample_period: 1.0,
            bptt_length: 32,
            epochs: 200,
            adam: AdamConfig::default(),
            loss: LossKind::Mse,
            metric: MetricKind::Mse,
            solver: SolverKind::Fused,
            activation: Activation::Sigmoid,
            grad_clip: 10.0,
            seed: RngSeed(0),
        }
    }
}

impl TrainingConfig {
    pub fn dt(&self) -> f64 {
        self.sample_period / self.solver_substeps as f64
    }

    /// Default solver for a cell kind: fused for LTC, RK4 otherwise.
    pub fn default_solver(kind: CellKind) -> SolverKind {
        match kind {
            CellKind::Ltc => SolverKind::Fused,
            _ => SolverKind::Rk4,
        }
    }

    pub fn validate(&self, kind: CellKind) -> Result<()> {
        let counts = [
            ("hidden_units", self.hidden_units),
            ("minibatch", self.minibatch),
            ("solver_substeps", self.solver_substeps),
            ("bptt_length", self.bptt_length),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be >= 1")));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Parameter("sample period must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Parameter("gradient clip must be positive".into()));
        }
        if self.solver.is_adaptive() {
            return Err(Error::Contract("training unrolls fixed-step solvers only".into()));
        }
        self.solver.check_compatible(kind)?;
        self.loss.validate()?;
        self.metric.check_loss(&self.loss)
    }
}

/// A cell, its readout and the solver it is unrolled with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: CellKind,
    pub params: CellParams,
    pub head: OutputHead,
    pub solver: SolverKind,
    pub substeps: usize,
    pub dt: f64,
}

impl Model {
    /// Fresh model per the training initialization; the readout starts at zero.
    pub fn init(kind: CellKind, inputs: usize, outputs: usize, config: &TrainingConfig) -> Result<Self> {
        config.validate(kind)?;
        let mut rng = config.seed.stream(0);
        let params = CellParams::init_for_training(config.hidden_units, inputs, config.activation, &mut rng)?;
        Ok(Self {
            kind,
            params,
            head: OutputHead::zeros(config.hidden_units, outputs),
            solver: config.solver,
            substeps: config.solver_substeps,
            dt: config.dt(),
        })
    }

    /// Parameter groups in canonical order: τ, γ, γ_r, μ, A, W_out, b_out.
    pub fn groups_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.params.tau,
            self.params.gamma.data_mut(),
            self.params.gamma_r.data_mut(),
            &mut self.params.mu,
            &mut self.params.a,
            self.head.w_out.data_mut(),
            &mut self.head.b_out,
        ]
    }

    pub fn groups(&self) -> [&[f64]; 7] {
        [
            &self.params.tau,
            self.params.gamma.data(),
            self.params.gamma_r.data(),
            &self.params.mu,
            &self.params.a,
            self.head.w_out.data(),
            &self.head.b_out,
        ]
    }
}

pub const GROUP_NAMES: [&str; 7] = ["tau", "gamma", "gamma_r", "mu", "a", "w_out", "b_out"];
