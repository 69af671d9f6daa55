//! Forward unrolling with a full cache of solver sub-steps, and the exact
//! reverse pass through every sub-step.

use super::loss::loss_gradient_step;
use super::{LossKind, Model, Sequence};
use crate::cells::{CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::solvers::{fused_update, SolverKind};

/// Gradients for every parameter group of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tau: Vec<f64>,
    pub gamma: Matrix,
    pub gamma_r: Matrix,
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let p = &model.params;
        Self {
            tau: vec![0.0; p.n],
            gamma: Matrix::zeros(p.m, p.n),
            gamma_r: Matrix::zeros(p.n, p.n),
            mu: vec![0.0; p.n],
            a: vec![0.0; p.n],
            w_out: Matrix::zeros(p.n, model.head.outputs()),
            b_out: vec![0.0; model.head.outputs()],
        }
    }

    /// Same canonical order as [`Model::groups`].
    pub fn groups(&self) -> [&[f64]; 7] {
        [&self.tau, self.gamma.data(), self.gamma_r.data(), &self.mu, &self.a, self.w_out.data(), &self.b_out]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.tau,
            self.gamma.data_mut(),
            self.gamma_r.data_mut(),
            &mut self.mu,
            &mut self.a,
            self.w_out.data_mut(),
            &mut self.b_out,
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.groups().iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

#[derive(Debug, Clone)]
struct SubStep {
    sample: usize,
    x_in: Vec<f64>,
    /// RK4 stage inputs `y2, y3, y4`; empty for Euler and fused steps.
    stages: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct SequenceCache {
    substeps: Vec<SubStep>,
    sample_states: Vec<Vec<f64>>,
}

/// Everything the reverse pass needs, recorded by [`forward_unroll`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    kind: CellKind,
    solver: SolverKind,
    substeps: usize,
    dt: f64,
    n: usize,
    outputs: usize,
    sequences: Vec<SequenceCache>,
}

impl ForwardCache {
    /// Cached sub-step states per sequence (`T x L` each).
    pub fn cached_states_per_sequence(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.substeps.len()).collect()
    }

    pub fn cached_states(&self) -> usize {
        self.sequences.iter().map(|s| s.substeps.len()).sum()
    }

    /// Hidden state after each input sample, per sequence.
    pub fn sample_states(&self, sequence: usize) -> &[Vec<f64>] {
        &self.sequences[sequence].sample_states
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `batch x time x outputs`.
    pub predictions: Vec<Vec<Vec<f64>>>,
    pub cache: ForwardCache,
}

/// Runs every sequence from `x = 0`, holding each input for `L` sub-steps and
/// reading out after each sample.
pub fn forward_unroll(model: &Model, batch: &[Sequence]) -> Result<ForwardPass> {
    let p = &model.params;
    if model.solver.is_adaptive() {
        return Err(Error::Contract("forward_unroll supports fixed-step solvers only".into()));
    }
    model.solver.check_compatible(model.kind)?;
    if model.substeps == 0 || !(model.dt > 0.0) {
        return Err(Error::Parameter("substeps must be >= 1 and dt > 0".into()));
    }
    if model.head.w_out.rows() != p.n {
        return Err(Error::Shape("readout rows must equal the neuron count".into()));
    }
    let mut predictions = Vec::with_capacity(batch.len());
    let mut sequences = Vec::with_capacity(batch.len());
    let mut k = Buffers::new(p.n);
    for seq in batch {
        let mut x = vec![0.0; p.n];
        let mut cache = SequenceCache {
            substeps: Vec::with_capacity(seq.len() * model.substeps),
            sample_states: Vec::with_capacity(seq.len()),
        };
        let mut preds = Vec::with_capacity(seq.len());
        for (t, input) in seq.inputs.iter().enumerate() {
            p.check_shapes(&x, input)?;
            for _ in 0..model.substeps {
                let (next, stages) = step_forward(model, &x, input, &mut k).map_err(|e| e.at_time(t))?;
                cache.substeps.push(SubStep { sample: t, x_in: std::mem::replace(&mut x, next), stages });
            }
            preds.push(model.head.readout(&x));
            cache.sample_states.push(x.clone());
        }
        predictions.push(preds);
        sequences.push(cache);
    }
    Ok(ForwardPass {
        predictions,
        cache: ForwardCache {
            kind: model.kind,
            solver: model.solver,
            substeps: model.substeps,
            dt: model.dt,
            n: p.n,
            outputs: model.head.outputs(),
            sequences,
        },
    })
}

/// Predictions only.
pub fn predict(model: &Model, batch: &[Sequence]) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(forward_unroll(model, batch)?.predictions)
}

struct Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    f: Vec<f64>,
    gy: Vec<f64>,
    v: Vec<f64>,
    acc: Vec<f64>,
    g2: Vec<f64>,
    g3: Vec<f64>,
    g4: Vec<f64>,
}

impl Buffers {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            k1: z(),
            k2: z(),
            k3: z(),
            k4: z(),
            f: z(),
            gy: z(),
            v: z(),
            acc: z(),
            g2: z(),
            g3: z(),
            g4: z(),
        }
    }
}

fn step_forward(model: &Model, x: &[f64], input: &[f64], k: &mut Buffers) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = &model.params;
    let dt = model.dt;
    let field = |y: &[f64], out: &mut [f64]| crate::cells::derivative_into(model.kind, p, y, input, out);
    let n = x.len();
    let (out, stages) = match model.solver {
        SolverKind::Euler => {
            field(x, &mut k.k1)?;
            ((0..n).map(|i| x[i] + dt * k.k1[i]).collect::<Vec<_>>(), Vec::new())
        }
        SolverKind::Rk4 => {
            field(x, &mut k.k1)?;
            let y2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k.k1[i]).collect();
            field(&y2, &mut k.k2)?;
            let y3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k.k2[i]).collect();
            field(&y3, &mut k.k3)?;
            let y4: Vec<f64> = (0..n).map(|i| x[i] + dt * k.k3[i]).collect();
            field(&y4, &mut k.k4)?;
            let out = (0..n).map(|i| x[i] + dt / 6.0 * (k.k1[i] + 2.0 * k.k2[i] + 2.0 * k.k3[i] + k.k4[i])).collect();
            (out, vec![y2, y3, y4])
        }
        SolverKind::Fused => {
            p.f_into(x, input, &mut k.f);
            let mut out = vec![0.0; n];
            fused_update(x, &k.f, dt, p, &mut out)?;
            (out, Vec::new())
        }
        SolverKind::Dopri45 { .. } => unreachable!("rejected by forward_unroll"),
    };
    if let Some(coordinate) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Overflow { coordinate });
    }
    Ok((out, stages))
}

/// Cotangent of `F(y, I)`: writes `v·∂F/∂y` into `gy` and accumulates the
/// parameter cotangents into `grads`.
fn field_vjp(
    kind: CellKind,
    p: &CellParams,
    y: &[f64],
    input: &[f64],
    v: &[f64],
    gy: &mut [f64],
    grads: &mut Gradients,
    b: &mut BufPre,
) {
    p.pre_activation_into(y, input, &mut b.pre);
    for i in 0..p.n {
        b.f[i] = p.activation.apply(b.pre[i]);
        b.d[i] = p.activation.derivative(b.pre[i]);
    }
    match kind {
        CellKind::NeuralOde => {
            gy.iter_mut().for_each(|g| *g = 0.0);
            b.gf.copy_from_slice(v);
        }
        CellKind::CtRnn => {
            for i in 0..p.n {
                let inv = 1.0 / p.tau[i];
                gy[i] = -v[i] * inv;
                grads.tau[i] += v[i] * y[i] * inv * inv;
                b.gf[i] = v[i];
            }
        }
        CellKind::Ltc => {
            for i in 0..p.n {
                let inv = 1.0 / p.tau[i];
                gy[i] = -v[i] * (inv + b.f[i]);
                grads.tau[i] += v[i] * y[i] * inv * inv;
                grads.a[i] += v[i] * b.f[i];
                b.gf[i] = v[i] * (p.a[i] - y[i]);
            }
        }
    }
    backprop_pre(p, y, input, gy, grads, b);
}

/// Pushes `gf` through the activation and the affine pre-activation.
fn backprop_pre(p: &CellParams, y: &[f64], input: &[f64], gy: &mut [f64], grads: &mut Gradients, b: &mut BufPre) {
    for i in 0..p.n {
        b.gpre[i] = b.gf[i] * b.d[i];
    }
    p.gamma_r.accumulate_mul_vec(&b.gpre, gy);
    grads.gamma_r.add_outer(y, &b.gpre, 1.0);
    grads.gamma.add_outer(input, &b.gpre, 1.0);
    for i in 0..p.n {
        grads.mu[i] += b.gpre[i];
    }
}

struct BufPre {
    pre: Vec<f64>,
    f: Vec<f64>,
    d: Vec<f64>,
    gf: Vec<f64>,
    gpre: Vec<f64>,
}

impl BufPre {
    fn new(n: usize) -> Self {
        Self { pre: vec![0.0; n], f: vec![0.0; n], d: vec![0.0; n], gf: vec![0.0; n], gpre: vec![0.0; n] }
    }
}

/// Reverse pass of one sub-step: on entry `g` is the cotangent of the
/// sub-step output, on exit that of its input.
fn step_backward(model: &Model, step: &SubStep, input: &[f64], g: &mut [f64], grads: &mut Gradients, k: &mut Buffers, b: &mut BufPre) {
    let p = &model.params;
    let dt = model.dt;
    let n = p.n;
    let x = &step.x_in;
    match model.solver {
        SolverKind::Euler => {
            for i in 0..n {
                k.v[i] = dt * g[i];
            }
            field_vjp(model.kind, p, x, input, &k.v, &mut k.gy, grads, b);
            for i in 0..n {
                g[i] += k.gy[i];
            }
        }
        SolverKind::Rk4 => {
            let (y2, y3, y4) = (&step.stages[0], &step.stages[1], &step.stages[2]);
            // Stage cotangents before propagation through later stages.
            for i in 0..n {
                k.k1[i] = dt / 6.0 * g[i];
                k.g2[i] = dt / 3.0 * g[i];
                k.g3[i] = dt / 3.0 * g[i];
                k.g4[i] = dt / 6.0 * g[i];
                k.acc[i] = g[i];
            }
            field_vjp(model.kind, p, y4, input, &k.g4, &mut k.gy, grads, b);
            for i in 0..n {
                k.acc[i] += k.gy[i];
                k.g3[i] += dt * k.gy[i];
            }
            field_vjp(model.kind, p, y3, input, &k.g3, &mut k.gy, grads, b);
            for i in 0..n {
                k.acc[i] += k.gy[i];
                k.g2[i] += 0.5 * dt * k.gy[i];
            }
            field_vjp(model.kind, p, y2, input, &k.g2, &mut k.gy, grads, b);
            for i in 0..n {
                k.acc[i] += k.gy[i];
                k.k1[i] += 0.5 * dt * k.gy[i];
            }
            field_vjp(model.kind, p, x, input, &k.k1, &mut k.gy, grads, b);
            for i in 0..n {
                g[i] = k.acc[i] + k.gy[i];
            }
        }
        SolverKind::Fused => {
            p.pre_activation_into(x, input, &mut b.pre);
            for i in 0..n {
                let f = p.activation.apply(b.pre[i]);
                b.d[i] = p.activation.derivative(b.pre[i]);
                let inv = 1.0 / p.tau[i];
                let den = 1.0 + dt * (inv + f);
                let out = (x[i] + dt * f * p.a[i]) / den;
                let gnum = g[i] / den;
                let gden = -g[i] * out / den;
                k.gy[i] = gnum;
                b.gf[i] = dt * (gnum * p.a[i] + gden);
                grads.a[i] += gnum * dt * f;
                grads.tau[i] -= gden * dt * inv * inv;
            }
            backprop_pre(p, x, input, &mut k.gy, grads, b);
            g.copy_from_slice(&k.gy);
        }
        SolverKind::Dopri45 { .. } => unreachable!("rejected by forward_unroll"),
    }
}

/// Exact gradients of the total loss (see [`super::loss_eval`]) with respect to
/// every parameter, by reverse-mode differentiation through all cached
/// sub-steps. Returns `(loss, gradients)`.
pub fn bptt_gradients(model: &Model, forward: &ForwardPass, batch: &[Sequence], loss: &LossKind) -> Result<(f64, Gradients)> {
    let cache = &forward.cache;
    let p = &model.params;
    if cache.kind != model.kind
        || cache.solver != model.solver
        || cache.substeps != model.substeps
        || cache.dt != model.dt
        || cache.n != p.n
        || cache.outputs != model.head.outputs()
    {
        return Err(Error::Usage("forward cache was produced with a different model configuration".into()));
    }
    if cache.sequences.len() != batch.len()
        || cache.sequences.iter().zip(batch).any(|(c, s)| c.sample_states.len() != s.len() || s.targets.len() != s.len())
    {
        return Err(Error::Usage("forward cache does not match the batch".into()));
    }
    loss.validate()?;
    let n = p.n;
    let outputs = model.head.outputs();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut k = Buffers::new(n);
    let mut b = BufPre::new(n);
    let mut gy = vec![0.0; outputs];
    let mut total = 0.0;

    for ((seq_cache, seq), preds) in cache.sequences.iter().zip(batch).zip(&forward.predictions) {
        let mut g = vec![0.0; n];
        let mut step_idx = seq_cache.substeps.len();
        for t in (0..seq.len()).rev() {
            if seq.mask[t] {
                total += loss_gradient_step(loss, &preds[t], &seq.targets, t, Some(&mut gy))?;
                gy.iter_mut().for_each(|v| *v *= scale);
                let x_t = &seq_cache.sample_states[t];
                grads.w_out.add_outer(x_t, &gy, 1.0);
                for (bo, gv) in grads.b_out.iter_mut().zip(&gy) {
                    *bo += gv;
                }
                model.head.w_out.accumulate_mul_vec(&gy, &mut g);
            }
            for _ in 0..model.substeps {
                step_idx -= 1;
                let step = &seq_cache.substeps[step_idx];
                debug_assert_eq!(step.sample, t);
                step_backward(model, step, &seq.inputs[t], &mut g, &mut grads, &mut k, &mut b);
            }
        }
    }
    Ok((total * scale, grads))
}
