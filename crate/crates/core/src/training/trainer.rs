use rand::seq::SliceRandom;

use super::{
    adam_update, bptt_gradients, clip_global_norm, forward_unroll, loss_eval, metric_eval, predict, AdamState, Model,
    Sequence, TrainingConfig,
};
use crate::cells::CellKind;
use crate::error::{Error, Result};

/// Metrics after one epoch; epoch 0 describes the initial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Optimizer steps skipped because of non-finite gradients.
    pub skipped_updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation metric seen.
    pub best: Model,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub log: Vec<EpochMetrics>,
    /// Set when training stopped early on a non-finite loss.
    pub diverged: Option<String>,
}

/// Loss and metric of `model` over `data`, evaluated in chunks of `chunk`.
pub fn evaluate(model: &Model, data: &[Sequence], config: &TrainingConfig) -> Result<(f64, f64)> {
    let preds = data
        .chunks(config.minibatch.max(1))
        .map(|c| predict(model, c))
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok((loss_eval(&config.loss, &preds, data)?, metric_eval(config.metric, &preds, data)?))
}

fn is_better(candidate: f64, best: f64, higher: bool) -> bool {
    if higher {
        candidate > best
    } else {
        candidate < best
    }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e.root(), Error::Overflow { .. } | Error::Singularity { .. })
}

/// Minibatch Adam on BPTT gradients. After every epoch the validation metric
/// is evaluated and the best weights are kept (ties keep the earlier epoch).
pub fn train_loop(
    kind: CellKind,
    config: &TrainingConfig,
    train: &[Sequence],
    val: &[Sequence],
    inputs: usize,
    outputs: usize,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation splits must be non-empty".into()));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.len() > config.bptt_length) {
        return Err(Error::Input(format!("sequence of length {} exceeds bptt_length {}", s.len(), config.bptt_length)));
    }
    let mut model = Model::init(kind, inputs, outputs, config)?;
    let higher = config.metric.higher_is_better();
    let mut rng = config.seed.stream(1);
    let mut adam = AdamState::new(&model);

    let (train_loss, train_metric) = evaluate(&model, train, config)?;
    let (val_loss, val_metric) = evaluate(&model, val, config)?;
    let mut log = vec![EpochMetrics { epoch: 0, train_loss, train_metric, val_loss, val_metric, skipped_updates: 0 }];
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_metric = val_metric;
    let mut diverged = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut skipped = 0;
        for chunk in order.chunks(config.minibatch) {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| train[i].clone()).collect();
            let step = forward_unroll(&model, &batch).and_then(|fwd| bptt_gradients(&model, &fwd, &batch, &config.loss));
            let (loss, mut grads) = match step {
                Ok(r) => r,
                Err(e) if is_numeric_failure(&e) => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                diverged = Some(format!("epoch {epoch}: non-finite minibatch loss {loss}"));
                break 'epochs;
            }
            clip_global_norm(&mut grads, config.grad_clip);
            if !adam_update(&mut model, &grads, &mut adam, &config.adam, config.learning_rate) {
                skipped += 1;
            }
        }
        let evals = evaluate(&model, train, config).and_then(|t| Ok((t, evaluate(&model, val, config)?)));
        let ((train_loss, train_metric), (val_loss, val_metric)) = match evals {
            Ok(r) => r,
            Err(e) if is_numeric_failure(&e) => {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        log.push(EpochMetrics { epoch, train_loss, train_metric, val_loss, val_metric, skipped_updates: skipped });
        if !val_loss.is_finite() || !train_loss.is_finite() {
            diverged = Some(format!("epoch {epoch}: non-finite loss (train {train_loss}, validation {val_loss})"));
            break;
        }
        if is_better(val_metric, best_metric, higher) {
            best = model.clone();
            best_epoch = epoch;
            best_metric = val_metric;
        }
    }
    Ok(TrainOutcome { best, best_epoch, best_metric, log, diverged })
}
