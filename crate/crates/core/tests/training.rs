use ltc_core::cells::CellKind;
use ltc_core::numeric::RngSeed;
use ltc_core::training::{
    bptt_gradients, evaluate, forward_unroll, predict, sgd_update, train_loop, Gradients, LossKind, Model, Sequence,
    Targets, TrainingConfig,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

fn batch(seed: u64) -> Vec<Sequence> {
    let mut rng = RngSeed(seed).rng();
    (0..4)
        .map(|_| {
            let inputs = (0..10).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let targets = (0..10).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
            Sequence::new(inputs, Targets::Values(targets)).unwrap()
        })
        .collect()
}

/// With the cell frozen, the loss is a convex quadratic in the readout. Plain
/// gradient descent at step `1/λ_max` must decrease it monotonically and
/// reach the normal-equation optimum.
#[test]
fn readout_descent_reaches_least_squares_optimum() {
    let cfg = TrainingConfig { hidden_units: 3, solver_substeps: 2, sample_period: 0.5, ..TrainingConfig::default() };
    let mut model = Model::init(CellKind::Ltc, 2, 1, &cfg).unwrap();
    // Spread-out weights decorrelate the neurons and keep the problem well conditioned.
    model.params.gamma = ltc_core::Matrix::from_rows(&[vec![3.0, -2.0, 0.5], vec![-1.0, 2.5, 3.0]]).unwrap();
    model.params.mu = vec![0.5, -0.3, 0.1];
    model.params.a = vec![1.0, -1.0, 2.0];
    model.params.tau = vec![0.3, 1.0, 3.0];
    let data = batch(9);
    let fwd = forward_unroll(&model, &data).unwrap();

    // Design matrix [x_t, 1] over every (sequence, step).
    let rows: Vec<Vec<f64>> = (0..data.len())
        .flat_map(|s| fwd.cache.sample_states(s).iter().map(|x| x.iter().copied().chain([1.0]).collect::<Vec<_>>()))
        .collect();
    let y: Vec<f64> = data
        .iter()
        .flat_map(|s| match &s.targets {
            Targets::Values(v) => v.iter().map(|r| r[0]).collect::<Vec<_>>(),
            Targets::Labels(_) => unreachable!(),
        })
        .collect();
    let h = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
    let yv = DMatrix::from_column_slice(y.len(), 1, &y);
    let gram = h.transpose() * &h;
    let solution = gram.clone().cholesky().expect("full rank").solve(&(h.transpose() * &yv));
    let optimum_loss = (&h * &solution - &yv).norm_squared() / data.len() as f64;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    assert!(eig.max() / eig.min() < 1e4, "condition number {}", eig.max() / eig.min());
    let lambda_max = eig.max() * 2.0 / data.len() as f64;
    let lr = 1.0 / lambda_max;

    let mut previous = f64::INFINITY;
    let mut loss = 0.0;
    for _ in 0..100_000 {
        let fwd = forward_unroll(&model, &data).unwrap();
        let (l, g) = bptt_gradients(&model, &fwd, &data, &LossKind::Mse).unwrap();
        assert!(l <= previous + 1e-12, "loss increased: {previous} -> {l}");
        previous = l;
        loss = l;
        if l - optimum_loss < 1e-10 {
            break;
        }
        let head_only = Gradients { w_out: g.w_out, b_out: g.b_out, ..Gradients::zeros_like(&model) };
        let frozen = model.params.clone();
        assert!(sgd_update(&mut model, &head_only, lr));
        assert_eq!(model.params, frozen);
    }
    assert!(loss - optimum_loss < 1e-10, "{loss} vs optimum {optimum_loss}");
    // Excess loss (1/B)·ΔᵀGΔ bounds the distance to the optimum through λ_min(G).
    let w: Vec<f64> = (0..3).map(|i| model.head.w_out.get(i, 0)).chain([model.head.b_out[0]]).collect();
    let dist = w.iter().zip(solution.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let bound = (data.len() as f64 * (loss - optimum_loss).max(0.0) / eig.min()).sqrt();
    assert!(dist <= bound + 1e-9, "distance {dist} exceeds {bound}");
}

#[test]
fn predict_matches_training_forward_pass() {
    let cfg = TrainingConfig { hidden_units: 5, ..TrainingConfig::default() };
    let model = Model::init(CellKind::CtRnn, 2, 1, &TrainingConfig { solver: ltc_core::SolverKind::Rk4, ..cfg }).unwrap();
    let data = batch(3);
    assert_eq!(predict(&model, &data).unwrap(), forward_unroll(&model, &data).unwrap().predictions);
}

#[test]
fn cached_states_scale_with_substeps_times_length() {
    let data = batch(4);
    let mut counts = Vec::new();
    for l in [1, 2, 4] {
        let cfg = TrainingConfig { hidden_units: 3, solver_substeps: l, ..TrainingConfig::default() };
        let model = Model::init(CellKind::Ltc, 2, 1, &cfg).unwrap();
        counts.push(forward_unroll(&model, &data).unwrap().cache.cached_states());
    }
    assert_eq!(counts, vec![4 * 10, 4 * 20, 4 * 40]);
}

#[test]
fn training_run_is_reproducible_and_keeps_the_best_weights() {
    let cfg = TrainingConfig { hidden_units: 6, epochs: 8, minibatch: 3, ..TrainingConfig::default() };
    let (train, val) = (batch(1), batch(2));
    let a = train_loop(CellKind::Ltc, &cfg, &train, &val, 2, 1).unwrap();
    let b = train_loop(CellKind::Ltc, &cfg, &train, &val, 2, 1).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best, b.best);
    let (_, metric) = evaluate(&a.best, &val, &cfg).unwrap();
    assert_eq!(metric, a.best_metric);
    assert_eq!(a.log[a.best_epoch].val_metric, a.best_metric);
    let other = train_loop(CellKind::Ltc, &TrainingConfig { seed: RngSeed(1), ..cfg }, &train, &val, 2, 1).unwrap();
    assert_ne!(other.log, a.log);
}
