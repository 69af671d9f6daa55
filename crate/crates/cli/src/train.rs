use anyhow::{Context, Result};
use ltc_core::data::{load_csv, prepare, prepare_from_spec, Dataset, LoadOptions, MissingPolicy, Prepared};
use ltc_core::numeric::RngSeed;
use ltc_core::training::{
    checkpoint_load, checkpoint_to_string, evaluate, train_loop, Checkpoint, EpochMetrics, LossKind, MetricKind,
    TrainingConfig,
};
use serde_json::json;

use crate::run::{usage, Run, EXIT_OK, EXIT_RUNTIME};
use crate::{EvalArgs, SplitName, Task, TrainArgs};

fn load_dataset(
    path: &std::path::Path,
    features: &[String],
    targets: &[String],
    missing: MissingPolicy,
    sequence_column: Option<String>,
    labels: bool,
) -> Result<Dataset> {
    let options = LoadOptions { sequence_column, labels };
    let d = load_csv(path, features, targets, missing, &options).with_context(|| format!("loading {}", path.display()))?;
    if d.filled_cells > 0 {
        eprintln!("warning: {} missing cells filled ({missing})", d.filled_cells);
    }
    Ok(d)
}

fn warn_pipeline(p: &Prepared, names: &[String]) {
    if p.split.skipped_segments > 0 {
        eprintln!("warning: {} sequences shorter than the window were skipped", p.split.skipped_segments);
    }
    for (name, constant) in names.iter().zip(&p.feature_stats.constant) {
        if *constant {
            eprintln!("warning: feature {name:?} is constant on the training rows; its std was set to 1");
        }
    }
}

fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_metric,val_loss,val_metric,skipped_updates\n");
    for m in log {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.train_loss, m.train_metric, m.val_loss, m.val_metric, m.skipped_updates
        ));
    }
    s
}

fn config_json(c: &TrainingConfig) -> serde_json::Value {
    json!({
        "hidden_units": c.hidden_units,
        "minibatch": c.minibatch,
        "learning_rate": c.learning_rate,
        "solver_substeps": c.solver_substeps,
        "sample_period": c.sample_period,
        "bptt_length": c.bptt_length,
        "epochs": c.epochs,
        "adam": [c.adam.beta1, c.adam.beta2, c.adam.eps],
        "loss": c.loss,
        "metric": c.metric,
        "solver": c.solver,
        "activation": c.activation.name(),
        "grad_clip": c.grad_clip,
        "seed": c.seed.0,
    })
}

pub fn cmd_train(a: &TrainArgs, run: &mut Run) -> Result<u8> {
    let classify = a.task == Task::Classification;
    let loss = match (classify, a.class_weights.is_empty()) {
        (false, true) => LossKind::Mse,
        (false, false) => return Err(usage("--class-weights needs --task classification")),
        (true, true) => LossKind::CrossEntropy,
        (true, false) => LossKind::WeightedCrossEntropy { class_weights: a.class_weights.clone() },
    };
    let config = TrainingConfig {
        hidden_units: a.hidden_units,
        minibatch: a.batch,
        learning_rate: a.lr,
        solver_substeps: a.substeps,
        sample_period: a.sample_period,
        bptt_length: a.data.window,
        epochs: a.epochs,
        metric: a.metric.unwrap_or(MetricKind::default_for(&loss)),
        loss,
        solver: a.solver.unwrap_or(TrainingConfig::default_solver(a.model)),
        activation: a.activation,
        grad_clip: a.grad_clip,
        seed: RngSeed(a.seed),
        ..TrainingConfig::default()
    };
    let d = &a.data;
    run.record_config(
        &json!({
            "model": a.model,
            "training": config_json(&config),
            "data": {
                "path": d.data, "features": d.features, "targets": d.targets, "task": format!("{:?}", a.task),
                "sequence_column": d.sequence_column, "missing": d.missing, "window": d.window, "stride": d.stride,
                "split": d.split, "split_seed": d.split_seed, "normalize_targets": d.normalize_targets,
            },
        }),
        Some(a.seed),
    )?;
    config.validate(a.model)?;

    let dataset = load_dataset(&d.data, &d.features, &d.targets, d.missing, d.sequence_column.clone(), classify)?;
    let prepared = prepare(&dataset, d.window, d.stride, d.split, RngSeed(d.split_seed), d.normalize_targets && !classify)?;
    warn_pipeline(&prepared, &d.features);
    let outputs = dataset.num_classes().unwrap_or(d.targets.len());
    if let LossKind::WeightedCrossEntropy { class_weights } = &config.loss {
        if class_weights.len() != outputs {
            return Err(usage(format!("{} class weights given for {outputs} classes", class_weights.len())));
        }
    }

    let outcome = train_loop(a.model, &config, &prepared.train, &prepared.validation, d.features.len(), outputs)?;
    run.write("metrics.csv", metrics_csv(&outcome.log))?;
    let test = if prepared.test.is_empty() { None } else { Some(evaluate(&outcome.best, &prepared.test, &config)?) };

    let spec = prepared.spec(&dataset, d.stride, d.split, RngSeed(d.split_seed), d.missing, d.sequence_column.clone());
    let mut checkpoint = Checkpoint::new(outcome.best.clone(), config.clone(), outcome.best_metric, outcome.best_epoch);
    checkpoint.data = Some(spec);
    run.write("checkpoint.json", checkpoint_to_string(&checkpoint)?)?;

    let metric = config.metric.name();
    run.write_json(
        "summary.json",
        &json!({
            "model": a.model,
            "windows": {"train": prepared.train.len(), "validation": prepared.validation.len(), "test": prepared.test.len()},
            "epochs_run": outcome.log.len() - 1,
            "best_epoch": outcome.best_epoch,
            "metric": metric,
            "best_validation_metric": outcome.best_metric,
            "test_loss": test.map(|t| t.0),
            "test_metric": test.map(|t| t.1),
            "diverged": outcome.diverged,
        }),
    )?;
    println!("best epoch {} validation {metric} {}", outcome.best_epoch, outcome.best_metric);
    if let Some((_, m)) = test {
        println!("test {metric} {m}");
    }
    if let Some(msg) = &outcome.diverged {
        eprintln!("error: training diverged: {msg}");
        return Ok(EXIT_RUNTIME);
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs, run: &mut Run) -> Result<u8> {
    run.record_config(
        &json!({"checkpoint": a.checkpoint, "data": a.data, "split": format!("{:?}", a.split),
                "features": a.features, "targets": a.targets}),
        None,
    )?;
    let checkpoint = checkpoint_load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut spec = checkpoint.data.clone().ok_or_else(|| usage("the checkpoint records no data pipeline"))?;
    let m = checkpoint.model.params.m;
    if !a.features.is_empty() {
        if a.features.len() != m {
            return Err(ltc_core::Error::Schema(format!("{} feature columns given, the model takes {m}", a.features.len())).into());
        }
        spec.features = a.features.clone();
    }
    if !a.targets.is_empty() {
        if a.targets.len() != spec.targets.len() {
            return Err(ltc_core::Error::Schema(format!(
                "{} target columns given, the checkpoint was trained on {}",
                a.targets.len(),
                spec.targets.len()
            ))
            .into());
        }
        spec.targets = a.targets.clone();
    }
    let missing: MissingPolicy = spec.missing.parse()?;
    let dataset = load_dataset(&a.data, &spec.features, &spec.targets, missing, spec.sequence_column.clone(), spec.classes.is_some())?;
    if let (Some(c), Some(found)) = (spec.classes, dataset.num_classes()) {
        if found > c {
            return Err(ltc_core::Error::Schema(format!("labels reach class {}, the model has {c} classes", found - 1)).into());
        }
    }
    let prepared = prepare_from_spec(&dataset, &spec)?;
    let seqs = match a.split {
        SplitName::Train => &prepared.train,
        SplitName::Validation => &prepared.validation,
        SplitName::Test => &prepared.test,
    };
    if seqs.is_empty() {
        return Err(ltc_core::Error::Input(format!("the {:?} split is empty", a.split)).into());
    }
    let (loss, metric) = evaluate(&checkpoint.model, seqs, &checkpoint.config)?;
    let name = checkpoint.config.metric.name();
    run.write_json(
        "eval.json",
        &json!({
            "split": format!("{:?}", a.split).to_lowercase(),
            "windows": seqs.len(),
            "loss": loss,
            "metric": name,
            "value": metric,
        }),
    )?;
    println!("{:?} {name} {metric} (loss {loss})", a.split);
    Ok(EXIT_OK)
}
