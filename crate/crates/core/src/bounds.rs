//! Empirical verifiers for the LTC stability guarantees: with a sigmoid
//! nonlinearity the effective time constant stays in `[τ/(1+τ), τ]` and the
//! state stays in the box `[min(0, A), max(0, A)]`, whatever the input.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::cells::{time_constant_from_f, Activation, CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::{gaussian_vec_from, Matrix, RngSeed};
use crate::solvers::{fused_step, simulate, SolverKind};

/// Slack allowed on every bound check.
pub const BOUND_SLACK: f64 = 1e-9;

fn require_sigmoid(params: &CellParams) -> Result<()> {
    if params.activation != Activation::Sigmoid {
        return Err(Error::Contract(format!(
            "the time-constant and state bounds hold for a sigmoid nonlinearity (f in (0, 1)); got {}",
            params.activation
        )));
    }
    Ok(())
}

/// `(τ / (1 + τ w), τ)`: the interval of `τ / (1 + τ f)` for `f ∈ [0, w]`.
pub fn tau_interval(tau: f64, w: f64) -> (f64, f64) {
    (tau / (1.0 + tau * w), tau)
}

/// Per-neuron time-constant interval with the sigmoid's upper bound `W = 1`.
pub fn tau_bounds(params: &CellParams) -> Result<Vec<(f64, f64)>> {
    require_sigmoid(params)?;
    Ok(params.tau.iter().map(|&t| tau_interval(t, 1.0)).collect())
}

/// Per-neuron state interval `(min(0, A_i), max(0, A_i))`.
pub fn state_bounds(params: &CellParams) -> Result<Vec<(f64, f64)>> {
    require_sigmoid(params)?;
    Ok(params.a.iter().map(|&a| (a.min(0.0), a.max(0.0))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    State,
    TimeConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub trial: usize,
    pub neuron: usize,
    /// Solver step index (0 is the initial state).
    pub step: usize,
    pub bound: BoundKind,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    /// Distance outside the interval.
    pub margin: f64,
    /// The trial's weights include negative entries, which the bound's proof
    /// does not cover; recorded for diagnosis, still counted.
    pub outside_hypotheses: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialIntervals {
    pub tau: Vec<(f64, f64)>,
    pub state: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub trials: usize,
    pub state_samples: usize,
    pub time_constant_samples: usize,
    pub max_input_magnitude: f64,
    pub violation_count: usize,
    /// The first violations found (at most [`FuzzConfig::max_recorded`]).
    pub violations: Vec<Violation>,
    pub solver_failures: Vec<String>,
    pub intervals: Vec<TrialIntervals>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzConfig {
    pub trials: usize,
    pub steps: usize,
    pub dt: f64,
    pub max_neurons: usize,
    pub max_inputs: usize,
    pub input_amplitude: f64,
    pub solver: SolverKind,
    pub seed: RngSeed,
    pub max_recorded: usize,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            steps: 200,
            dt: 0.1,
            max_neurons: 16,
            max_inputs: 4,
            input_amplitude: 1e6,
            solver: SolverKind::Fused,
            seed: RngSeed(0),
            max_recorded: 100,
        }
    }
}

/// Random sigmoid LTC: `n ∈ [1, max_neurons]`, `m ∈ [1, max_inputs]`, weights
/// `N(0, s²)` with `s ∈ [0, 3]`, `μ ~ N(0, 1)`, `A ~ N(0, 4)`, `τ ~ U[0.05, 5]`.
pub fn random_sigmoid_ltc(rng: &mut ChaCha20Rng, max_neurons: usize, max_inputs: usize) -> Result<CellParams> {
    let n = rng.random_range(1..=max_neurons.max(1));
    let m = rng.random_range(1..=max_inputs.max(1));
    let s2 = rng.random_range(0.0..=3.0f64).powi(2);
    let gamma = Matrix::new(m, n, gaussian_vec_from(rng, m * n, 0.0, s2)?)?;
    let gamma_r = Matrix::new(n, n, gaussian_vec_from(rng, n * n, 0.0, s2)?)?;
    let mu = gaussian_vec_from(rng, n, 0.0, 1.0)?;
    let a = gaussian_vec_from(rng, n, 0.0, 4.0)?;
    let tau = (0..n).map(|_| rng.random_range(0.05..=5.0)).collect();
    Ok(CellParams { n, m, tau, gamma, gamma_r, mu, a, activation: Activation::Sigmoid })
}

/// Uniform inputs in `[-amplitude, amplitude]`, one vector per step.
pub fn uniform_inputs(rng: &mut ChaCha20Rng, m: usize, steps: usize, amplitude: f64) -> Vec<Vec<f64>> {
    (0..steps).map(|_| (0..m).map(|_| rng.random_range(-amplitude..=amplitude)).collect()).collect()
}

/// Fuzzes with the default samplers: trial 0 uses the full input amplitude,
/// later trials a log-uniform amplitude in `[1, input_amplitude]`.
pub fn fuzz_verify_default(config: &FuzzConfig) -> Result<BoundsReport> {
    let (max_n, max_m, amp) = (config.max_neurons, config.max_inputs, config.input_amplitude);
    fuzz_verify(
        config,
        |_, rng| random_sigmoid_ltc(rng, max_n, max_m),
        |trial, rng, m, steps| {
            let a = if trial == 0 || amp <= 1.0 { amp } else { amp.powf(rng.random_range(0.0..=1.0)) };
            uniform_inputs(rng, m, steps, a)
        },
    )
}

/// Simulates every trial from a random state inside the state box and checks
/// every visited state and every effective time constant against their
/// bounds. Violations are recorded, not raised. Parameters are not validated,
/// so corrupted configurations can serve as negative controls.
pub fn fuzz_verify(
    config: &FuzzConfig,
    mut sample_params: impl FnMut(usize, &mut ChaCha20Rng) -> Result<CellParams>,
    mut sample_inputs: impl FnMut(usize, &mut ChaCha20Rng, usize, usize) -> Vec<Vec<f64>>,
) -> Result<BoundsReport> {
    match config.solver {
        SolverKind::Fused | SolverKind::Dopri45 { .. } => {}
        other => {
            return Err(Error::Contract(format!("bounds are verified with the fused or dopri45 solver, not {other}")))
        }
    }
    if config.trials == 0 || config.steps == 0 || !(config.dt > 0.0) {
        return Err(Error::Parameter("trials and steps must be >= 1 and dt > 0".into()));
    }
    let mut report = BoundsReport {
        trials: config.trials,
        state_samples: 0,
        time_constant_samples: 0,
        max_input_magnitude: 0.0,
        violation_count: 0,
        violations: Vec::new(),
        solver_failures: Vec::new(),
        intervals: Vec::with_capacity(config.trials),
    };
    let record = |report: &mut BoundsReport, v: Violation| {
        report.violation_count += 1;
        if report.violations.len() < config.max_recorded {
            report.violations.push(v);
        }
    };

    for trial in 0..config.trials {
        let mut rng = config.seed.stream(trial as u64);
        let params = sample_params(trial, &mut rng)?;
        let tau_iv = tau_bounds(&params)?;
        let state_iv = state_bounds(&params)?;
        let outside = params.gamma.data().iter().chain(params.gamma_r.data()).any(|w| *w < 0.0);
        let inputs = sample_inputs(trial, &mut rng, params.m, config.steps);
        let peak = inputs.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        report.max_input_magnitude = report.max_input_magnitude.max(peak);
        let x0: Vec<f64> = state_iv.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect();

        let states = match run(&params, config, &x0, &inputs) {
            Ok(s) => s,
            Err(e) => {
                report.solver_failures.push(format!("trial {trial}: {e}"));
                continue;
            }
        };
        let mut f = vec![0.0; params.n];
        for (step, x) in states.iter().enumerate() {
            for (i, (&v, &(lo, hi))) in x.iter().zip(&state_iv).enumerate() {
                report.state_samples += 1;
                if !(v >= lo - BOUND_SLACK && v <= hi + BOUND_SLACK) {
                    let margin = if v.is_nan() { f64::INFINITY } else { (lo - v).max(v - hi) };
                    record(&mut report, Violation { trial, neuron: i, step, bound: BoundKind::State, value: v, lo, hi, margin, outside_hypotheses: outside });
                }
            }
            // The input active while leaving this state.
            let input = &inputs[step.min(inputs.len() - 1)];
            params.pre_activation_into(x, input, &mut f);
            f.iter_mut().for_each(|v| *v = params.activation.apply(*v));
            let taus = time_constant_from_f(&params.tau, &f);
            for i in 0..params.n {
                report.time_constant_samples += 1;
                let (lo, hi) = tau_iv[i];
                let value = match &taus {
                    Ok(t) => t[i],
                    Err(_) => f64::NAN,
                };
                if !(value >= lo - BOUND_SLACK && value <= hi + BOUND_SLACK) {
                    let margin = if value.is_nan() { f64::INFINITY } else { (lo - value).max(value - hi) };
                    record(
                        &mut report,
                        Violation { trial, neuron: i, step, bound: BoundKind::TimeConstant, value, lo, hi, margin, outside_hypotheses: outside },
                    );
                }
            }
        }
        report.intervals.push(TrialIntervals { tau: tau_iv, state: state_iv });
    }
    Ok(report)
}

/// Initial state followed by the state after every step.
fn run(params: &CellParams, config: &FuzzConfig, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match config.solver {
        SolverKind::Fused => {
            // Stepped directly so that corrupted parameters are not rejected.
            let mut states = Vec::with_capacity(inputs.len() + 1);
            states.push(x0.to_vec());
            for input in inputs {
                let next = fused_step(states.last().expect("non-empty"), input, config.dt, params)?;
                states.push(next);
            }
            Ok(states)
        }
        solver => Ok(simulate(CellKind::Ltc, params, solver, x0, inputs, config.dt, 1)?.states),
    }
}
