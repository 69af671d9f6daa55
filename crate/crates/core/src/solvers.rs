//! Integrators for cell dynamics: explicit Euler, classical RK4, adaptive
//! Dormand–Prince 4(5), and the fused semi-implicit LTC step, plus sequence
//! simulation and computational-depth measurement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::mean_std;

/// A vector field `dx/dt = F(x, I)` with the input held fixed during a call.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn derivative_into(&self, x: &[f64], input: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Adapts a closure into a [`Dynamics`].
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Dynamics for FnField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn derivative_into(&self, x: &[f64], input: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, input, out);
        Ok(())
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(coordinate) => Err(Error::Overflow { coordinate }),
        None => Ok(()),
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("step size must be finite and >= 0, got {dt}")));
    }
    Ok(())
}

/// `x + dt * F(x, I)`.
pub fn euler_step<D: Dynamics + ?Sized>(field: &D, x: &[f64], input: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let mut k = vec![0.0; x.len()];
    field.derivative_into(x, input, &mut k)?;
    let out: Vec<f64> = x.iter().zip(&k).map(|(xi, ki)| xi + dt * ki).collect();
    check_finite(&out)?;
    Ok(out)
}

/// Classical four-stage Runge–Kutta step with the input held constant.
pub fn rk4_step<D: Dynamics + ?Sized>(field: &D, x: &[f64], input: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut y = vec![0.0; n];
    field.derivative_into(x, input, &mut k1)?;
    axpy_into(x, 0.5 * dt, &k1, &mut y);
    field.derivative_into(&y, input, &mut k2)?;
    axpy_into(x, 0.5 * dt, &k2, &mut y);
    field.derivative_into(&y, input, &mut k3)?;
    axpy_into(x, dt, &k3, &mut y);
    field.derivative_into(&y, input, &mut k4)?;
    let out: Vec<f64> = (0..n).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    check_finite(&out)?;
    Ok(out)
}

#[inline]
fn axpy_into(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * k[i];
    }
}

/// Semi-implicit LTC update `(x + dt f⊙A) / (1 + dt (1/τ + f))`, with `f`
/// evaluated at the current state.
pub fn fused_step(x: &[f64], input: &[f64], dt: f64, params: &CellParams) -> Result<Vec<f64>> {
    check_dt(dt)?;
    params.check_shapes(x, input)?;
    let mut f = vec![0.0; params.n];
    params.f_into(x, input, &mut f);
    let mut out = vec![0.0; params.n];
    fused_update(x, &f, dt, params, &mut out)?;
    Ok(out)
}

/// Minimum admissible fused-step denominator.
pub const FUSED_MIN_DENOMINATOR: f64 = 1e-9;

#[inline]
pub(crate) fn fused_update(x: &[f64], f: &[f64], dt: f64, params: &CellParams, out: &mut [f64]) -> Result<()> {
    for i in 0..x.len() {
        let den = 1.0 + dt * (1.0 / params.tau[i] + f[i]);
        if den <= FUSED_MIN_DENOMINATOR {
            return Err(Error::Singularity { coordinate: i, value: den });
        }
        out[i] = (x[i] + dt * f[i] * params.a[i]) / den;
        if !out[i].is_finite() {
            return Err(Error::Overflow { coordinate: i });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0) || !(atol > 0.0) {
            return Err(Error::Parameter(format!("tolerances must be positive, got rtol={rtol}, atol={atol}")));
        }
        Ok(Self { rtol, atol })
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutcome {
    pub state: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Step size the controller proposes for continuing past the span.
    pub next_step: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Fifth-order weights minus the embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
// PI controller exponents (Hairer & Wanner's dopri5 defaults).
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;
const MIN_STEP_RELATIVE: f64 = 1e-12;
const MAX_STEPS: usize = 5_000_000;

/// Integrates over `t_span` with the Dormand–Prince 4(5) pair and a PI
/// step-size controller. Returns the final state and accepted step count.
pub fn dopri45_integrate<D: Dynamics + ?Sized>(
    field: &D,
    x0: &[f64],
    input: &[f64],
    t_span: (f64, f64),
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, usize)> {
    let out = dopri45_integrate_with(field, x0, input, t_span, Tolerances::new(rtol, atol)?, None)?;
    Ok((out.state, out.accepted_steps))
}

/// As [`dopri45_integrate`], optionally starting from a given step size
/// (default `span / 100`).
pub fn dopri45_integrate_with<D: Dynamics + ?Sized>(
    field: &D,
    x0: &[f64],
    input: &[f64],
    t_span: (f64, f64),
    tol: Tolerances,
    initial_step: Option<f64>,
) -> Result<AdaptiveOutcome> {
    dopri45_integrate_timed(|_, x, out| field.derivative_into(x, input, out), x0, t_span, tol, initial_step)
}

/// Dormand–Prince 4(5) for a non-autonomous field `dx/dt = F(t, x)`.
pub fn dopri45_integrate_timed(
    mut field: impl FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    x0: &[f64],
    t_span: (f64, f64),
    tol: Tolerances,
    initial_step: Option<f64>,
) -> Result<AdaptiveOutcome> {
    let (t0, t1) = t_span;
    if !t0.is_finite() || !t1.is_finite() || t1 < t0 {
        return Err(Error::Parameter(format!("invalid time span [{t0}, {t1}]")));
    }
    Tolerances::new(tol.rtol, tol.atol)?;
    let span = t1 - t0;
    let n = x0.len();
    let mut y = x0.to_vec();
    if span == 0.0 {
        return Ok(AdaptiveOutcome { state: y, accepted_steps: 0, rejected_steps: 0, next_step: 0.0 });
    }
    let min_step = MIN_STEP_RELATIVE * span;
    let mut h = initial_step.filter(|h| *h > 0.0 && h.is_finite()).unwrap_or(span / 100.0).min(span);

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    field(t0, &y, &mut k1)?;
    let mut t = t0;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;
    let mut next_step = h;

    while t < t1 {
        if accepted + rejected >= MAX_STEPS {
            return Err(Error::Stiffness { t, step: h, min_step });
        }
        let final_step = t + h >= t1 || (t1 - (t + h)) < min_step;
        if final_step {
            h = t1 - t;
        }

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        field(t + C2 * h, &stage, &mut k2)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field(t + C3 * h, &stage, &mut k3)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field(t + C4 * h, &stage, &mut k4)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field(t + C5 * h, &stage, &mut k5)?;
        for i in 0..n {
            stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        field(t + h, &stage, &mut k6)?;
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        field(t + h, &y_new, &mut k7)?;

        let mut acc = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            acc += (e / sc).powi(2);
            finite &= y_new[i].is_finite();
        }
        let err = if n == 0 { 0.0 } else { (acc / n as f64).sqrt() };

        if finite && err <= 1.0 {
            accepted += 1;
            t = if final_step { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let mut factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
            };
            factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
            if last_rejected {
                factor = factor.min(1.0);
            }
            err_prev = err.max(1e-4);
            last_rejected = false;
            next_step = h * factor;
            if final_step {
                // Keep the proposal from the full step rather than a clipped one.
                next_step = next_step.max(h);
            }
            h = next_step;
        } else {
            rejected += 1;
            let factor = if finite { (SAFETY * err.powf(-PI_ALPHA)).clamp(MIN_FACTOR, 1.0) } else { MIN_FACTOR };
            h *= factor;
            last_rejected = true;
        }
        if t < t1 && h < min_step {
            return Err(Error::Stiffness { t, step: h, min_step });
        }
    }
    check_finite(&y)?;
    Ok(AdaptiveOutcome { state: y, accepted_steps: accepted, rejected_steps: rejected, next_step })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolverKind {
    Euler,
    Rk4,
    Dopri45 { rtol: f64, atol: f64 },
    Fused,
}

impl SolverKind {
    pub fn dopri45_default() -> Self {
        let t = Tolerances::default();
        SolverKind::Dopri45 { rtol: t.rtol, atol: t.atol }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, SolverKind::Dopri45 { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Rk4 => "rk4",
            SolverKind::Dopri45 { .. } => "dopri45",
            SolverKind::Fused => "fused",
        }
    }

    pub fn check_compatible(&self, kind: CellKind) -> Result<()> {
        if let SolverKind::Dopri45 { rtol, atol } = *self {
            Tolerances::new(rtol, atol)?;
        }
        if *self == SolverKind::Fused && kind != CellKind::Ltc {
            return Err(Error::Contract(format!("the fused solver applies to LTC cells only, not {kind}")));
        }
        Ok(())
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;
    /// Parses `euler`, `rk4`, `fused`, `dopri45` (default tolerances).
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(SolverKind::Euler),
            "rk4" => Ok(SolverKind::Rk4),
            "fused" => Ok(SolverKind::Fused),
            "dopri45" | "dopri5" | "rk45" => Ok(SolverKind::dopri45_default()),
            other => Err(Error::Parameter(format!("unknown solver {other:?}"))),
        }
    }
}

/// States visited by [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Strictly increasing times; `times[0]` belongs to the initial state.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Solver steps per input sample (`L` for fixed-step solvers).
    pub steps_taken: Vec<usize>,
    /// Index into `states` of the state at the end of each input sample.
    pub sample_ends: Vec<usize>,
}

impl Trajectory {
    /// The state after each input sample, in order (excludes the initial state).
    pub fn sample_states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.sample_ends.iter().map(move |&i| self.states[i].as_slice())
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// One fixed sub-step of `solver` for `kind`.
pub fn solver_step(kind: CellKind, params: &CellParams, solver: SolverKind, x: &[f64], input: &[f64], dt: f64) -> Result<Vec<f64>> {
    let cell = crate::cells::Cell::new(kind, params);
    match solver {
        SolverKind::Euler => euler_step(&cell, x, input, dt),
        SolverKind::Rk4 => rk4_step(&cell, x, input, dt),
        SolverKind::Fused => {
            SolverKind::Fused.check_compatible(kind)?;
            fused_step(x, input, dt, params)
        }
        SolverKind::Dopri45 { rtol, atol } => {
            dopri45_integrate_with(&cell, x, input, (0.0, dt), Tolerances::new(rtol, atol)?, None).map(|o| o.state)
        }
    }
}

/// Runs a cell over an input sequence. Each sample is held constant for `unfold`
/// sub-steps of length `dt`, each sub-step starting from the previous one's
/// output. Adaptive solvers integrate the whole sample interval `unfold * dt`
/// and carry their step-size proposal into the next sample.
pub fn simulate(
    kind: CellKind,
    params: &CellParams,
    solver: SolverKind,
    x0: &[f64],
    inputs: &[Vec<f64>],
    dt: f64,
    unfold: usize,
) -> Result<Trajectory> {
    if unfold == 0 {
        return Err(Error::Parameter("unfold (L) must be >= 1".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    solver.check_compatible(kind)?;
    if x0.len() != params.n {
        return Err(Error::Shape(format!("x0 has length {}, cell has {} neurons", x0.len(), params.n)));
    }
    let cell = crate::cells::Cell::new(kind, params);
    let capacity = 1 + inputs.len() * if solver.is_adaptive() { 1 } else { unfold };
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        steps_taken: Vec::with_capacity(inputs.len()),
        sample_ends: Vec::with_capacity(inputs.len()),
    };
    traj.times.push(0.0);
    traj.states.push(x0.to_vec());
    let sample_span = dt * unfold as f64;
    let mut x = x0.to_vec();
    let mut warm_step: Option<f64> = None;

    for (j, input) in inputs.iter().enumerate() {
        let t_start = j as f64 * sample_span;
        match solver {
            SolverKind::Dopri45 { rtol, atol } => {
                let out = dopri45_integrate_with(&cell, &x, input, (0.0, sample_span), Tolerances { rtol, atol }, warm_step)
                    .map_err(|e| e.at_time(j))?;
                warm_step = Some(out.next_step.min(sample_span));
                x = out.state;
                traj.times.push(t_start + sample_span);
                traj.states.push(x.clone());
                traj.steps_taken.push(out.accepted_steps);
            }
            _ => {
                for s in 0..unfold {
                    x = solver_step(kind, params, solver, &x, input, dt).map_err(|e| e.at_time(j))?;
                    traj.times.push(t_start + (s + 1) as f64 * dt);
                    traj.states.push(x.clone());
                }
                traj.steps_taken.push(unfold);
            }
        }
        traj.sample_ends.push(traj.states.len() - 1);
    }
    Ok(traj)
}

/// Accepted Dormand–Prince steps per input sample when the whole sequence is
/// integrated in one pass. Sample `j` arrives at `t = j·dt`; between arrivals
/// the input is interpolated linearly, and the last sample is held until
/// `t = T·dt`. Unlike per-sample integration this can be below one step per
/// sample for slowly varying dynamics.
pub fn sequence_depth(
    kind: CellKind,
    params: &CellParams,
    x0: &[f64],
    inputs: &[Vec<f64>],
    dt: f64,
    tol: Tolerances,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Input("computational depth needs at least one input sample".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let last = inputs.len() - 1;
    let mut current = inputs[0].clone();
    let field = |t: f64, x: &[f64], out: &mut [f64]| {
        let s = (t / dt).clamp(0.0, last as f64);
        let j = (s.floor() as usize).min(last);
        let w = s - j as f64;
        if j == last || w == 0.0 {
            current.copy_from_slice(&inputs[j]);
        } else {
            for ((c, a), b) in current.iter_mut().zip(&inputs[j]).zip(&inputs[j + 1]) {
                *c = a + w * (b - a);
            }
        }
        crate::cells::derivative_into(kind, params, x, &current, out)
    };
    let span = dt * inputs.len() as f64;
    let out = dopri45_integrate_timed(field, x0, (0.0, span), tol, None)?;
    Ok(out.accepted_steps as f64 / inputs.len() as f64)
}

/// Mean and spread of computational depth over parameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub mean: f64,
    pub std: f64,
    /// Depth of each successful trial.
    pub per_trial: Vec<f64>,
    /// Trials abandoned because the adaptive solver hit its minimum step.
    pub stiffness_failures: usize,
}

/// Computational depth ([`sequence_depth`] from `x = 0`) averaged over
/// `trials` parameter draws; the std is taken across trials.
///
/// `sample_params(trial)` supplies a fresh parameter set per trial. Stiffness
/// failures are counted and excluded; other errors abort.
pub fn computational_depth(
    kind: CellKind,
    mut sample_params: impl FnMut(usize) -> Result<CellParams>,
    inputs: &[Vec<f64>],
    solver: SolverKind,
    dt: f64,
    trials: usize,
) -> Result<DepthStats> {
    let SolverKind::Dopri45 { rtol, atol } = solver else {
        return Err(Error::Contract(format!(
            "computational depth is defined for adaptive solvers only, got {solver}"
        )));
    };
    let tol = Tolerances::new(rtol, atol)?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let mut per_trial = Vec::with_capacity(trials);
    let mut failures = 0;
    for trial in 0..trials {
        let params = sample_params(trial)?;
        match sequence_depth(kind, &params, &vec![0.0; params.n], inputs, dt, tol) {
            Ok(d) => per_trial.push(d),
            Err(e) if e.is_stiffness() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let (mean, std) = mean_std(&per_trial);
    Ok(DepthStats { mean, std, per_trial, stiffness_failures: failures })
}
