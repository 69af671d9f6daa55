//! Checkpoint persistence. Every float is stored as the hex string of its IEEE
//! bits, so save → load is exact and save → load → save is byte-identical.

use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AdamConfig, LossKind, MetricKind, Model, OutputHead, TrainingConfig};
use crate::cells::{Activation, CellKind, CellParams};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngSeed, RNG_ALGORITHM};
use crate::solvers::SolverKind;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const TAU_POLICY: &str = "tau clamped to >= 1e-6 after every optimizer update";

/// How raw CSV columns were turned into model inputs; lets `eval` and
/// `replay` rebuild the exact pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub features: Vec<String>,
    pub targets: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Empty for classification targets.
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    /// `Some(C)` for class-label targets with `C` classes.
    pub classes: Option<usize>,
    pub window: usize,
    pub stride: usize,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    /// Missing-cell policy name (`zero`, `forward-fill`, `error`).
    pub missing: String,
    pub sequence_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainingConfig,
    pub best_validation_metric: f64,
    pub best_epoch: usize,
    pub rng_algorithm: String,
    pub data: Option<DataSpec>,
}

impl Checkpoint {
    pub fn new(model: Model, config: TrainingConfig, best_validation_metric: f64, best_epoch: usize) -> Self {
        Self { model, config, best_validation_metric, best_epoch, rng_algorithm: RNG_ALGORITHM.to_string(), data: None }
    }
}

#[derive(Clone, Copy)]
struct Hex(f64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0.to_bits()))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(D::Error::custom(format!("expected 16 hex digits, got {s:?}")));
        }
        u64::from_str_radix(&s, 16).map(|b| Hex(f64::from_bits(b))).map_err(D::Error::custom)
    }
}

fn hex_vec(v: &[f64]) -> Vec<Hex> {
    v.iter().copied().map(Hex).collect()
}

fn unhex(v: &[Hex]) -> Vec<f64> {
    v.iter().map(|h| h.0).collect()
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<Hex>,
}

impl MatrixDoc {
    fn from(m: &Matrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: hex_vec(m.data()) }
    }

    fn into_matrix(self) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, unhex(&self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    n: usize,
    m: usize,
    activation: String,
    tau: Vec<Hex>,
    gamma: MatrixDoc,
    gamma_r: MatrixDoc,
    mu: Vec<Hex>,
    a: Vec<Hex>,
}

#[derive(Serialize, Deserialize)]
struct HeadDoc {
    w_out: MatrixDoc,
    b_out: Vec<Hex>,
}

#[derive(Serialize, Deserialize)]
struct SolverDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rtol: Option<Hex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atol: Option<Hex>,
}

#[derive(Serialize, Deserialize)]
struct LossDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_weights: Option<Vec<Hex>>,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    hidden_units: usize,
    minibatch: usize,
    learning_rate: Hex,
    solver_substeps: usize,
    sample_period: Hex,
    bptt_length: usize,
    epochs: usize,
    adam_beta1: Hex,
    adam_beta2: Hex,
    adam_eps: Hex,
    loss: LossDoc,
    metric: MetricKind,
    solver: SolverDoc,
    activation: String,
    grad_clip: Hex,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DataDoc {
    features: Vec<String>,
    targets: Vec<String>,
    feature_mean: Vec<Hex>,
    feature_std: Vec<Hex>,
    target_mean: Vec<Hex>,
    target_std: Vec<Hex>,
    classes: Option<usize>,
    window: usize,
    stride: usize,
    split_ratios: [Hex; 3],
    split_seed: u64,
    missing: String,
    sequence_column: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    cell_kind: CellKind,
    solver: SolverDoc,
    substeps: usize,
    dt: Hex,
    params: ParamsDoc,
    head: HeadDoc,
    config: ConfigDoc,
    best_validation_metric: Hex,
    best_epoch: usize,
    rng_algorithm: String,
    tau_policy: String,
    data: Option<DataDoc>,
}

fn solver_doc(s: &SolverKind) -> SolverDoc {
    let (rtol, atol) = match *s {
        SolverKind::Dopri45 { rtol, atol } => (Some(Hex(rtol)), Some(Hex(atol))),
        _ => (None, None),
    };
    SolverDoc { kind: s.name().to_string(), rtol, atol }
}

fn solver_from(d: SolverDoc) -> Result<SolverKind> {
    match (d.kind.parse::<SolverKind>()?, d.rtol, d.atol) {
        (SolverKind::Dopri45 { .. }, Some(r), Some(a)) => Ok(SolverKind::Dopri45 { rtol: r.0, atol: a.0 }),
        (SolverKind::Dopri45 { .. }, _, _) => Err(Error::Schema("dopri45 solver needs rtol and atol".into())),
        (s, _, _) => Ok(s),
    }
}

fn loss_doc(l: &LossKind) -> LossDoc {
    let class_weights = match l {
        LossKind::WeightedCrossEntropy { class_weights } => Some(hex_vec(class_weights)),
        _ => None,
    };
    LossDoc { kind: l.name().to_string(), class_weights }
}

fn loss_from(d: LossDoc) -> Result<LossKind> {
    match (d.kind.as_str(), d.class_weights) {
        ("mse", _) => Ok(LossKind::Mse),
        ("cross-entropy", _) => Ok(LossKind::CrossEntropy),
        ("weighted-cross-entropy", Some(w)) => Ok(LossKind::WeightedCrossEntropy { class_weights: unhex(&w) }),
        (other, _) => Err(Error::Schema(format!("unknown or incomplete loss {other:?}"))),
    }
}

fn to_doc(c: &Checkpoint) -> CheckpointDoc {
    let p = &c.model.params;
    let cfg = &c.config;
    CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        cell_kind: c.model.kind,
        solver: solver_doc(&c.model.solver),
        substeps: c.model.substeps,
        dt: Hex(c.model.dt),
        params: ParamsDoc {
            n: p.n,
            m: p.m,
            activation: p.activation.name().to_string(),
            tau: hex_vec(&p.tau),
            gamma: MatrixDoc::from(&p.gamma),
            gamma_r: MatrixDoc::from(&p.gamma_r),
            mu: hex_vec(&p.mu),
            a: hex_vec(&p.a),
        },
        head: HeadDoc { w_out: MatrixDoc::from(&c.model.head.w_out), b_out: hex_vec(&c.model.head.b_out) },
        config: ConfigDoc {
            hidden_units: cfg.hidden_units,
            minibatch: cfg.minibatch,
            learning_rate: Hex(cfg.learning_rate),
            solver_substeps: cfg.solver_substeps,
            sample_period: Hex(cfg.sample_period),
            bptt_length: cfg.bptt_length,
            epochs: cfg.epochs,
            adam_beta1: Hex(cfg.adam.beta1),
            adam_beta2: Hex(cfg.adam.beta2),
            adam_eps: Hex(cfg.adam.eps),
            loss: loss_doc(&cfg.loss),
            metric: cfg.metric,
            solver: solver_doc(&cfg.solver),
            activation: cfg.activation.name().to_string(),
            grad_clip: Hex(cfg.grad_clip),
            seed: cfg.seed.0,
        },
        best_validation_metric: Hex(c.best_validation_metric),
        best_epoch: c.best_epoch,
        rng_algorithm: c.rng_algorithm.clone(),
        tau_policy: TAU_POLICY.to_string(),
        data: c.data.as_ref().map(|d| DataDoc {
            features: d.features.clone(),
            targets: d.targets.clone(),
            feature_mean: hex_vec(&d.feature_mean),
            feature_std: hex_vec(&d.feature_std),
            target_mean: hex_vec(&d.target_mean),
            target_std: hex_vec(&d.target_std),
            classes: d.classes,
            window: d.window,
            stride: d.stride,
            split_ratios: d.split_ratios.map(Hex),
            split_seed: d.split_seed,
            missing: d.missing.clone(),
            sequence_column: d.sequence_column.clone(),
        }),
    }
}

fn from_doc(d: CheckpointDoc) -> Result<Checkpoint> {
    let activation: Activation = d.params.activation.parse()?;
    let params = CellParams {
        n: d.params.n,
        m: d.params.m,
        tau: unhex(&d.params.tau),
        gamma: d.params.gamma.into_matrix()?,
        gamma_r: d.params.gamma_r.into_matrix()?,
        mu: unhex(&d.params.mu),
        a: unhex(&d.params.a),
        activation,
    };
    params.validate().map_err(|e| Error::Schema(format!("cell parameters: {e}")))?;
    let head = OutputHead { w_out: d.head.w_out.into_matrix()?, b_out: unhex(&d.head.b_out) };
    if head.w_out.rows() != params.n || head.w_out.cols() != head.b_out.len() {
        return Err(Error::Schema("readout shape does not match the cell".into()));
    }
    let c = d.config;
    let config = TrainingConfig {
        hidden_units: c.hidden_units,
        minibatch: c.minibatch,
        learning_rate: c.learning_rate.0,
        solver_substeps: c.solver_substeps,
        sample_period: c.sample_period.0,
        bptt_length: c.bptt_length,
        epochs: c.epochs,
        adam: AdamConfig { beta1: c.adam_beta1.0, beta2: c.adam_beta2.0, eps: c.adam_eps.0 },
        loss: loss_from(c.loss)?,
        metric: c.metric,
        solver: solver_from(c.solver)?,
        activation: c.activation.parse()?,
        grad_clip: c.grad_clip.0,
        seed: RngSeed(c.seed),
    };
    let model = Model {
        kind: d.cell_kind,
        params,
        head,
        solver: solver_from(d.solver)?,
        substeps: d.substeps,
        dt: d.dt.0,
    };
    let data = d.data.map(|x| DataSpec {
        features: x.features,
        targets: x.targets,
        feature_mean: unhex(&x.feature_mean),
        feature_std: unhex(&x.feature_std),
        target_mean: unhex(&x.target_mean),
        target_std: unhex(&x.target_std),
        classes: x.classes,
        window: x.window,
        stride: x.stride,
        split_ratios: x.split_ratios.map(|h| h.0),
        split_seed: x.split_seed,
        missing: x.missing,
        sequence_column: x.sequence_column,
    });
    Ok(Checkpoint {
        model,
        config,
        best_validation_metric: d.best_validation_metric.0,
        best_epoch: d.best_epoch,
        rng_algorithm: d.rng_algorithm,
        data,
    })
}

pub fn checkpoint_to_string(c: &Checkpoint) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_doc(c))?;
    s.push('\n');
    Ok(s)
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Schema("missing format_version".into()))?;
    if found != u64::from(CHECKPOINT_FORMAT_VERSION) {
        return Err(Error::Version { found: found.min(u64::from(u32::MAX)) as u32, supported: CHECKPOINT_FORMAT_VERSION });
    }
    from_doc(serde_json::from_value(value)?)
}

pub fn checkpoint_save(path: &Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(c)?)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
