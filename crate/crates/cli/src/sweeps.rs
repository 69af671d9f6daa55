use std::fmt::Write as _;

use anyhow::Result;
use ltc_core::bounds::{fuzz_verify_default, FuzzConfig};
use ltc_core::cells::CellKind;
use ltc_core::expressivity::{circle_samples, trajectory_sweep, write_rows_csv, ExpressivityConfig, ExpressivityReport};
use ltc_core::numeric::RngSeed;
use ltc_core::solvers::{computational_depth, SolverKind};
use serde_json::json;

use crate::run::{usage, Run, EXIT_OK, EXIT_VIOLATIONS};
use crate::{BoundsArgs, CompareArgs, SweepArgs};

fn with_tolerances(solver: SolverKind, a: &SweepArgs) -> SolverKind {
    match solver {
        SolverKind::Dopri45 { .. } => SolverKind::Dopri45 { rtol: a.rtol, atol: a.atol },
        other => other,
    }
}

fn sweep_config(a: &SweepArgs) -> ExpressivityConfig {
    ExpressivityConfig {
        kinds: a.models.clone(),
        activation: a.activation,
        width: a.width,
        layers: a.layers,
        weight_variance: a.sw2,
        bias_variance: a.sb2,
        trials: a.trials,
        dt: a.dt,
        samples: a.samples,
        solver: with_tolerances(a.solver, a),
        seed: RngSeed(a.seed),
        keep_paths: a.keep_paths,
    }
}

fn paths_csv(report: &ExpressivityReport) -> String {
    let mut s = String::from("trial,model,index,pc1,pc2\n");
    for (trial, kind, path) in &report.paths {
        for (i, p) in path.points().iter().enumerate() {
            let _ = writeln!(s, "{trial},{kind},{i},{},{}", p[0], p[1]);
        }
    }
    s
}

fn print_failures(failures: &[String]) {
    for f in failures {
        eprintln!("warning: excluded {f}");
    }
}

pub fn cmd_expressivity(a: &SweepArgs, run: &mut Run) -> Result<u8> {
    let config = sweep_config(a);
    run.record_config(&config, Some(a.seed))?;
    let report = trajectory_sweep(&config)?;
    print_failures(&report.failures);
    let mut rows = Vec::new();
    write_rows_csv(&report.rows, &mut rows)?;
    run.write("trials.csv", rows)?;
    if a.keep_paths {
        run.write("paths.csv", paths_csv(&report))?;
    }
    let longest = report
        .summaries
        .iter()
        .filter(|s| s.trials_ok > 0)
        .max_by(|x, y| x.length_mean.total_cmp(&y.length_mean))
        .map(|s| s.model);
    run.write_json(
        "summary.json",
        &json!({
            "input_length": report.input_length,
            "summaries": report.summaries,
            "longest_mean_trajectory": longest,
            "failures": report.failures,
        }),
    )?;
    println!("{:<11} {:>12} {:>10} {:>8} {:>8}", "model", "length", "std", "var12", "depth");
    for s in &report.summaries {
        println!(
            "{:<11} {:>12.4} {:>10.4} {:>8.4} {:>8.4}",
            s.model.name(),
            s.length_mean,
            s.length_std,
            s.variance_explained_mean[0] + s.variance_explained_mean[1],
            s.depth_mean
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_depth(a: &SweepArgs, run: &mut Run) -> Result<u8> {
    let config = sweep_config(a);
    run.record_config(&config, Some(a.seed))?;
    if a.layers != 1 {
        return Err(usage("depth is measured on single-layer networks; use expressivity for stacks"));
    }
    config.validate()?;
    let inputs = circle_samples(config.samples, config.dt, 0.0);
    let mut csv = String::from("model,trial,depth\n");
    let mut stats = Vec::new();
    for &kind in &config.kinds {
        let d = computational_depth(
            kind,
            |t| Ok(config.sample_stack_params(t)?.remove(0)),
            &inputs,
            config.solver,
            config.dt,
            config.trials,
        )?;
        for (t, v) in d.per_trial.iter().enumerate() {
            let _ = writeln!(csv, "{kind},{t},{v}");
        }
        println!("{:<11} depth {:.4} ± {:.4} ({} stiffness failures)", kind.name(), d.mean, d.std, d.stiffness_failures);
        stats.push((kind, d));
    }
    run.write("depth.csv", csv)?;
    let mean = |k: CellKind| stats.iter().find(|(kind, _)| *kind == k).map(|(_, d)| d.mean);
    let ordered = match (mean(CellKind::Ltc), mean(CellKind::CtRnn), mean(CellKind::NeuralOde)) {
        (Some(l), Some(c), Some(n)) => Some(l > c && c > n),
        _ => None,
    };
    let ratio = mean(CellKind::Ltc).zip(mean(CellKind::NeuralOde)).map(|(l, n)| l / n);
    run.write_json(
        "summary.json",
        &json!({
            "models": stats.iter().map(|(k, d)| json!({
                "model": k, "mean": d.mean, "std": d.std,
                "trials_ok": d.per_trial.len(), "stiffness_failures": d.stiffness_failures,
            })).collect::<Vec<_>>(),
            "ltc_gt_ctrnn_gt_node": ordered,
            "ltc_over_node": ratio,
        }),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_solver_compare(a: &CompareArgs, run: &mut Run) -> Result<u8> {
    let base = sweep_config(&a.sweep);
    let solvers: Vec<SolverKind> = a.solvers.iter().map(|s| with_tolerances(*s, &a.sweep)).collect();
    run.record_config(&json!({"sweep": base, "solvers": solvers}), Some(a.sweep.seed))?;
    if solvers.is_empty() {
        return Err(usage("no solvers given"));
    }
    let mut csv = String::from("solver,trial,model,length,variance_explained_1,variance_explained_2,depth\n");
    let mut summary = Vec::new();
    let mut reference: Vec<(CellKind, f64)> = Vec::new();
    for (si, solver) in solvers.iter().enumerate() {
        let kinds: Vec<CellKind> = base.kinds.iter().copied().filter(|k| solver.check_compatible(*k).is_ok()).collect();
        if kinds.is_empty() {
            eprintln!("warning: {solver} applies to none of the requested models");
            continue;
        }
        let config = ExpressivityConfig { kinds, solver: *solver, keep_paths: false, ..base.clone() };
        let report = trajectory_sweep(&config)?;
        print_failures(&report.failures);
        for r in &report.rows {
            let _ = writeln!(
                csv,
                "{solver},{},{},{},{},{},{}",
                r.trial, r.model, r.length, r.variance_explained_1, r.variance_explained_2, r.depth
            );
        }
        for s in &report.summaries {
            if si == 0 {
                reference.push((s.model, s.length_mean));
            }
            let rel = reference
                .iter()
                .find(|(k, _)| *k == s.model)
                .map(|(_, r)| (s.length_mean - r).abs() / r.abs());
            println!("{:<8} {:<11} length {:.4} ± {:.4}", solver.name(), s.model.name(), s.length_mean, s.length_std);
            summary.push(json!({
                "solver": solver, "model": s.model, "length_mean": s.length_mean, "length_std": s.length_std,
                "trials_ok": s.trials_ok, "trials_failed": s.trials_failed,
                "relative_difference_to_first_solver": rel,
            }));
        }
    }
    run.write("trials.csv", csv)?;
    run.write_json("summary.json", &json!({ "results": summary }))?;
    Ok(EXIT_OK)
}

pub fn cmd_bounds(a: &BoundsArgs, run: &mut Run) -> Result<u8> {
    let config = FuzzConfig {
        trials: a.trials,
        steps: a.steps,
        dt: a.dt,
        max_neurons: a.max_neurons,
        max_inputs: a.max_inputs,
        input_amplitude: a.input_amp,
        solver: a.solver,
        seed: RngSeed(a.seed),
        max_recorded: a.max_recorded,
    };
    run.record_config(&config, Some(a.seed))?;
    let report = fuzz_verify_default(&config)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for v in &report.violations {
        w.serialize(v)?;
    }
    run.write("violations.csv", w.into_inner()?)?;
    run.write_json(
        "summary.json",
        &json!({
            "trials": report.trials,
            "state_samples": report.state_samples,
            "time_constant_samples": report.time_constant_samples,
            "max_input_magnitude": report.max_input_magnitude,
            "violations": report.violation_count,
            "solver_failures": report.solver_failures,
            "passed": report.passed(),
        }),
    )?;
    println!(
        "trials={} state_samples={} time_constant_samples={} violations={}",
        report.trials, report.state_samples, report.time_constant_samples, report.violation_count
    );
    Ok(if report.passed() { EXIT_OK } else { EXIT_VIOLATIONS })
}
