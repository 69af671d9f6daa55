//! Trajectory-length laboratory: drive random networks with a circular input,
//! project the hidden states onto their top two principal components and
//! measure the arc length of the resulting latent path.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::cells::{Activation, CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::{arc_length, mean_std, pca_top2, Matrix, Polyline2D, RngSeed};
use crate::solvers::{sequence_depth, simulate, SolverKind, Tolerances};

/// `num_points` samples of `(sin t, cos t)` with `t` uniform over `[0, 2π]`.
pub fn circular_input(num_points: usize) -> Result<Vec<Vec<f64>>> {
    if num_points < 2 {
        return Err(Error::Parameter("circular input needs at least 2 points".into()));
    }
    let step = TAU / (num_points - 1) as f64;
    Ok((0..num_points)
        .map(|k| {
            // Pin the last point to exactly 2π so the curve closes.
            let t = if k == num_points - 1 { TAU } else { k as f64 * step };
            vec![t.sin(), t.cos()]
        })
        .collect())
}

/// `samples` points `(sin t, cos t)` at `t = phase + k·dt`.
pub fn circle_samples(samples: usize, dt: f64, phase: f64) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|k| {
            let t = phase + k as f64 * dt;
            vec![t.sin(), t.cos()]
        })
        .collect()
}

/// One layer of a stack: layer `d + 1` receives layer `d`'s state after each
/// input sample as its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: CellKind,
    pub params: CellParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub path: Polyline2D,
    pub length: f64,
    pub variance_explained: [f64; 2],
    /// Hidden states did not move: the path is a single repeated point.
    pub degenerate: bool,
    /// Computational depth of each layer: [`sequence_depth`] for an adaptive
    /// solver, the fixed sub-step count (1) otherwise.
    pub depth_per_layer: Vec<f64>,
    /// Mean Euclidean norm of the last layer's hidden state over time.
    pub mean_state_norm: f64,
}

/// Runs the stack from zero state and projects the last layer's per-sample
/// states onto their top two principal components.
pub fn latent_trajectory(stack: &[Layer], inputs: &[Vec<f64>], solver: SolverKind, dt: f64) -> Result<LatentTrajectory> {
    if stack.is_empty() {
        return Err(Error::Parameter("layer stack is empty".into()));
    }
    let mut signal: Vec<Vec<f64>> = inputs.to_vec();
    let mut depth_per_layer = Vec::with_capacity(stack.len());
    for layer in stack {
        let x0 = vec![0.0; layer.params.n];
        let traj = simulate(layer.kind, &layer.params, solver, &x0, &signal, dt, 1)?;
        depth_per_layer.push(match solver {
            SolverKind::Dopri45 { rtol, atol } => {
                sequence_depth(layer.kind, &layer.params, &x0, &signal, dt, Tolerances::new(rtol, atol)?)?
            }
            _ => 1.0,
        });
        signal = traj.sample_states().map(<[f64]>::to_vec).collect();
    }
    let n = signal.first().map_or(0, Vec::len);
    let mean_state_norm =
        signal.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / signal.len().max(1) as f64;

    let (path, variance_explained) = if n >= 2 && signal.len() >= 2 {
        let pca = pca_top2(&Matrix::from_rows(&signal)?)?;
        (pca.projection, pca.variance_explained)
    } else {
        // A single neuron or sample: the "latent space" is the state itself.
        let pts = signal.iter().map(|x| [x.first().copied().unwrap_or(0.0), 0.0]).collect();
        (Polyline2D::new(pts)?, [1.0, 0.0])
    };
    let length = arc_length(&path);
    let degenerate = length == 0.0;
    Ok(LatentTrajectory { path, length, variance_explained, degenerate, depth_per_layer, mean_state_norm })
}

/// Sampling of the circular input: the full turn (`T = 629`, `dt = 0.01`)
/// or the short 100-sample sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputPreset {
    FullCircle,
    Short,
}

impl InputPreset {
    pub fn samples(self) -> usize {
        match self {
            InputPreset::FullCircle => 629,
            InputPreset::Short => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressivityConfig {
    pub kinds: Vec<CellKind>,
    pub activation: Activation,
    /// Width `k` of every layer.
    pub width: usize,
    /// Number of stacked layers `d`.
    pub layers: usize,
    pub weight_variance: f64,
    pub bias_variance: f64,
    pub trials: usize,
    /// Spacing of input samples in time; also the integration span per sample.
    pub dt: f64,
    pub samples: usize,
    pub solver: SolverKind,
    pub seed: RngSeed,
    /// Keep every latent path in the report.
    pub keep_paths: bool,
}

impl Default for ExpressivityConfig {
    fn default() -> Self {
        Self {
            kinds: CellKind::ALL.to_vec(),
            activation: Activation::HardTanh,
            width: 100,
            layers: 1,
            weight_variance: 2.0,
            bias_variance: 1.0,
            trials: 100,
            dt: 0.01,
            samples: InputPreset::FullCircle.samples(),
            solver: SolverKind::dopri45_default(),
            seed: RngSeed(0),
            keep_paths: false,
        }
    }
}

impl ExpressivityConfig {
    pub fn with_preset(mut self, preset: InputPreset) -> Self {
        self.samples = preset.samples();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.layers == 0 || self.trials == 0 || self.samples < 2 {
            return Err(Error::Parameter("width, layers and trials must be >= 1 and samples >= 2".into()));
        }
        if !(self.weight_variance >= 0.0) || !(self.bias_variance >= 0.0) {
            return Err(Error::Parameter("variances must be non-negative".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Parameter("dt must be positive".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Parameter("no cell kinds requested".into()));
        }
        for k in &self.kinds {
            self.solver.check_compatible(*k)?;
        }
        Ok(())
    }

    /// Parameters of every layer for one trial. All cell kinds share them.
    pub fn sample_stack_params(&self, trial: usize) -> Result<Vec<CellParams>> {
        let mut rng = self.seed.stream(trial as u64);
        (0..self.layers)
            .map(|d| {
                let m = if d == 0 { 2 } else { self.width };
                CellParams::init_random_network(
                    self.width,
                    m,
                    self.activation,
                    self.weight_variance,
                    self.bias_variance,
                    &mut rng,
                )
            })
            .collect()
    }
}

/// One (trial, model) measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub model: CellKind,
    pub length: f64,
    pub variance_explained_1: f64,
    pub variance_explained_2: f64,
    pub depth: f64,
    pub mean_state_norm: f64,
    /// Top-two variance explained below 0.5.
    pub low_variance: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: CellKind,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub length_mean: f64,
    pub length_std: f64,
    pub variance_explained_mean: [f64; 2],
    pub depth_mean: f64,
    pub depth_std: f64,
    pub state_norm_mean: f64,
    /// Bound expression with unit constant, evaluated at the measured depth;
    /// comparable across models only.
    pub relative_bound: f64,
    /// The CT-RNN numerator was non-positive and the bound was floored at 0.
    pub bound_floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressivityReport {
    pub config: ExpressivityConfig,
    pub input_length: f64,
    pub summaries: Vec<ModelSummary>,
    pub rows: Vec<TrialRow>,
    /// Failure messages, one per excluded (trial, model).
    pub failures: Vec<String>,
    #[serde(skip)]
    pub paths: Vec<(usize, CellKind, Polyline2D)>,
}

impl ExpressivityReport {
    pub fn summary(&self, kind: CellKind) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.model == kind)
    }
}

/// Draws fresh weights per trial and measures every requested model on the
/// shared circular input. Stiffness failures are logged and excluded.
pub fn trajectory_sweep(config: &ExpressivityConfig) -> Result<ExpressivityReport> {
    config.validate()?;
    let inputs = circle_samples(config.samples, config.dt, 0.0);
    let input_pts = inputs.iter().map(|p| [p[0], p[1]]).collect();
    let input_length = arc_length(&Polyline2D::new(input_pts)?);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut failed = vec![0usize; config.kinds.len()];
    let mut paths = Vec::new();

    for trial in 0..config.trials {
        let params = config.sample_stack_params(trial)?;
        for (ki, &kind) in config.kinds.iter().enumerate() {
            let stack: Vec<Layer> = params.iter().map(|p| Layer { kind, params: p.clone() }).collect();
            match latent_trajectory(&stack, &inputs, config.solver, config.dt) {
                Ok(lt) => {
                    let depth = lt.depth_per_layer.iter().sum::<f64>() / lt.depth_per_layer.len() as f64;
                    let ve = lt.variance_explained;
                    rows.push(TrialRow {
                        trial,
                        model: kind,
                        length: lt.length,
                        variance_explained_1: ve[0],
                        variance_explained_2: ve[1],
                        depth,
                        mean_state_norm: lt.mean_state_norm,
                        low_variance: ve[0] + ve[1] < 0.5,
                        degenerate: lt.degenerate,
                    });
                    if config.keep_paths {
                        paths.push((trial, kind, lt.path));
                    }
                }
                Err(e) if e.is_stiffness() => {
                    failed[ki] += 1;
                    failures.push(format!("trial {trial}, {kind}: {e}"));
                }
                Err(e) => return Err(e),
            }
        }
    }

    let sigma_w = config.weight_variance.sqrt();
    let sigma_b = config.bias_variance.sqrt();
    let summaries = config
        .kinds
        .iter()
        .enumerate()
        .map(|(ki, &kind)| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.model == kind).collect();
            let col = |f: fn(&TrialRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (length_mean, length_std) = mean_std(&col(|r| r.length));
            let (depth_mean, depth_std) = mean_std(&col(|r| r.depth));
            let (ve1, _) = mean_std(&col(|r| r.variance_explained_1));
            let (ve2, _) = mean_std(&col(|r| r.variance_explained_2));
            let (state_norm_mean, _) = mean_std(&col(|r| r.mean_state_norm));
            let (k, d) = (config.width, config.layers);
            let (relative_bound, bound_floored) = match kind {
                CellKind::NeuralOde => (bound_node(sigma_w, sigma_b, k, d, depth_mean, input_length), false),
                CellKind::CtRnn => {
                    let b = bound_ctrnn(sigma_w, sigma_b, k, d, depth_mean, input_length);
                    (b.value, b.floored)
                }
                CellKind::Ltc => {
                    (bound_ltc(sigma_w, sigma_b, k, d, depth_mean, state_norm_mean, config.dt, input_length), false)
                }
            };
            ModelSummary {
                model: kind,
                trials_ok: mine.len(),
                trials_failed: failed[ki],
                length_mean,
                length_std,
                variance_explained_mean: [ve1, ve2],
                depth_mean,
                depth_std,
                state_norm_mean,
                relative_bound,
                bound_floored,
            }
        })
        .collect();
    Ok(ExpressivityReport { config: config.clone(), input_length, summaries, rows, failures, paths })
}

fn bound_base(numerator: f64, sigma_w: f64, sigma_b: f64, k: usize) -> f64 {
    let s2 = sigma_w * sigma_w + sigma_b * sigma_b;
    let k = k as f64;
    numerator * k.sqrt() / (s2 + k * s2.sqrt()).sqrt()
}

/// Lower-bound expression for Neural ODE trajectory length with unit
/// constant: `(σ_w√k / √(σ_w² + σ_b² + k√(σ_w² + σ_b²)))^(d·L) · l(I)`.
/// `depth` (`L`) may be fractional when it is a measured average.
pub fn bound_node(sigma_w: f64, sigma_b: f64, k: usize, d: usize, depth: f64, input_length: f64) -> f64 {
    let base = bound_base(sigma_w, sigma_w, sigma_b, k);
    if base == 0.0 {
        return 0.0;
    }
    base.powf(d as f64 * depth) * input_length
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CtRnnBound {
    pub value: f64,
    /// `σ_w ≤ σ_b`: the expression is not positive and was reported as 0.
    pub floored: bool,
}

/// As [`bound_node`] with numerator `(σ_w − σ_b)√k`.
pub fn bound_ctrnn(sigma_w: f64, sigma_b: f64, k: usize, d: usize, depth: f64, input_length: f64) -> CtRnnBound {
    let numerator = sigma_w - sigma_b;
    if numerator <= 0.0 {
        return CtRnnBound { value: 0.0, floored: numerator < 0.0 };
    }
    let base = bound_base(numerator, sigma_w, sigma_b, k);
    CtRnnBound { value: base.powf(d as f64 * depth) * input_length, floored: false }
}

/// LTC bound: the Neural ODE expression times `σ_w + ‖z‖ / min(δt, L)`.
#[allow(clippy::too_many_arguments)]
pub fn bound_ltc(
    sigma_w: f64,
    sigma_b: f64,
    k: usize,
    d: usize,
    depth: f64,
    z_norm: f64,
    delta_t: f64,
    input_length: f64,
) -> f64 {
    bound_node(sigma_w, sigma_b, k, d, depth, input_length) * (sigma_w + z_norm / delta_t.min(depth))
}

/// Flat CSV, one row per (trial, model).
pub fn write_rows_csv<W: std::io::Write>(rows: &[TrialRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
