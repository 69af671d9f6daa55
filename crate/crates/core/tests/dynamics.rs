//! Cell and solver properties checked across random parameters.

use ltc_core::cells::{instantaneous_time_constant, ltc_derivative, time_constant_from_f, Activation, CellKind, CellParams};
use ltc_core::numeric::{Matrix, RngSeed};
use ltc_core::solvers::{dopri45_integrate, fused_step, simulate, FnField, SolverKind};
use proptest::prelude::*;
use rand::Rng;

fn random_ltc(n: usize, m: usize, act: Activation, seed: u64) -> CellParams {
    let mut rng = RngSeed(seed).rng();
    let mut g = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-3.0..3.0));
    let (gamma, gamma_r) = (g(m, n), g(n, n));
    let mut rng = RngSeed(seed).stream(1);
    CellParams {
        n,
        m,
        tau: (0..n).map(|_| rng.random_range(0.05..5.0)).collect(),
        gamma,
        gamma_r,
        mu: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        a: (0..n).map(|_| rng.random_range(-4.0..4.0)).collect(),
        activation: act,
    }
}

proptest! {
    #[test]
    fn sigmoid_time_constant_is_bounded(n in 1usize..8, seed in any::<u64>(), scale in 0.0f64..1e6) {
        let p = random_ltc(n, 2, Activation::Sigmoid, seed);
        let mut rng = RngSeed(seed).stream(2);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let input = vec![rng.random_range(-scale..=scale), rng.random_range(-scale..=scale)];
        let ts = instantaneous_time_constant(&x, &input, &p).unwrap();
        for (t, tau) in ts.iter().zip(&p.tau) {
            prop_assert!(*t >= tau / (1.0 + tau) - 1e-9 && *t <= tau + 1e-9);
        }
    }

    #[test]
    fn time_constant_decreases_in_f(tau in 0.01f64..10.0, f in 0.0f64..5.0, df in 1e-6f64..1.0) {
        let a = time_constant_from_f(&[tau], &[f]).unwrap()[0];
        let b = time_constant_from_f(&[tau], &[f + df]).unwrap()[0];
        prop_assert!(b < a);
    }

    #[test]
    fn fused_states_stay_in_the_box(n in 1usize..8, seed in any::<u64>(), amp in 0.0f64..1e6, dt in 1e-3f64..10.0) {
        let p = random_ltc(n, 2, Activation::Sigmoid, seed);
        let lo = p.a.iter().fold(0.0f64, |m, &a| m.min(a)) - 1e-9;
        let hi = p.a.iter().fold(0.0f64, |m, &a| m.max(a)) + 1e-9;
        let mut rng = RngSeed(seed).stream(3);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(lo + 1e-9..=hi - 1e-9)).collect();
        for _ in 0..50 {
            let input = vec![rng.random_range(-amp..=amp), rng.random_range(-amp..=amp)];
            x = fused_step(&x, &input, dt, &p).unwrap();
            prop_assert!(x.iter().all(|v| *v >= lo && *v <= hi), "{x:?} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn derivatives_are_finite_and_deterministic(n in 1usize..8, seed in any::<u64>()) {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::HardTanh, Activation::Relu] {
            let p = random_ltc(n, 2, act, seed);
            let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            for kind in CellKind::ALL {
                let t1 = simulate(kind, &p, SolverKind::Rk4, &x, &[vec![0.5, -0.5], vec![1.0, 0.0]], 0.01, 3).unwrap();
                let t2 = simulate(kind, &p, SolverKind::Rk4, &x, &[vec![0.5, -0.5], vec![1.0, 0.0]], 0.01, 3).unwrap();
                prop_assert!(t1.states.iter().flatten().all(|v| v.is_finite()));
                prop_assert_eq!(t1, t2);
            }
        }
    }
}

fn scalar(tau: f64, w: f64, mu: f64, a: f64) -> CellParams {
    CellParams {
        n: 1,
        m: 1,
        tau: vec![tau],
        gamma: Matrix::zeros(1, 1),
        gamma_r: Matrix::from_rows(&[vec![w]]).unwrap(),
        mu: vec![mu],
        a: vec![a],
        activation: Activation::Sigmoid,
    }
}

/// Fully implicit Euler step `y = x + dt F(y)`, root found by bisection.
fn implicit_euler(p: &CellParams, x: f64, dt: f64) -> f64 {
    let g = |y: f64| y - x - dt * ltc_derivative(&[y], &[0.0], p).unwrap()[0];
    let (mut lo, mut hi) = (x - 10.0, x + 10.0);
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn fused_agrees_with_implicit_euler_to_second_order() {
    for (tau, w, mu, a, x) in [(1.0, 2.0, -0.5, 1.5, 0.3), (0.5, -3.0, 0.2, -2.0, -0.7), (2.0, 1.0, 1.0, 4.0, 2.0)] {
        let p = scalar(tau, w, mu, a);
        let err = |dt: f64| (fused_step(&[x], &[0.0], dt, &p).unwrap()[0] - implicit_euler(&p, x, dt)).abs();
        for dt in [0.02, 0.01] {
            let ratio = err(dt) / err(dt / 2.0);
            assert!((3.5..=4.5).contains(&ratio), "tau={tau} dt={dt}: ratio {ratio}");
        }
    }
}

#[test]
fn dopri45_error_tracks_tolerance() {
    let f = FnField::new(1, |x: &[f64], _: &[f64], out: &mut [f64]| out[0] = -x[0]);
    for k in 4..=10 {
        let rtol = 10f64.powi(-k);
        let (x, _) = dopri45_integrate(&f, &[1.0], &[], (0.0, 1.0), rtol, rtol * 1e-2).unwrap();
        let err = (x[0] - (-1.0f64).exp()).abs();
        assert!(err <= 10.0 * rtol, "rtol {rtol}: error {err}");
    }
}

#[test]
fn simulate_is_bit_reproducible_for_every_solver() {
    let p = random_ltc(5, 2, Activation::Sigmoid, 3);
    let inputs: Vec<Vec<f64>> = (0..20).map(|t| vec![(t as f64 * 0.3).sin(), (t as f64 * 0.2).cos()]).collect();
    for solver in [SolverKind::Euler, SolverKind::Rk4, SolverKind::Fused, SolverKind::dopri45_default()] {
        let a = simulate(CellKind::Ltc, &p, solver, &vec![0.0; 5], &inputs, 0.05, 2).unwrap();
        let b = simulate(CellKind::Ltc, &p, solver, &vec![0.0; 5], &inputs, 0.05, 2).unwrap();
        assert_eq!(a, b, "{solver}");
    }
}
