use proptest::prelude::*;
use qnbo::linalg::{dist, norm, rel_err, sub};
use qnbo::lower::{estimate_smoothness, gd_only};
use qnbo::problems::{make_toy, QuadraticToy};
use qnbo::rng::{gaussian_vec, seeded};
use qnbo::{solve_lower, BilevelProblem, Counted, InitScale, LowerSolveConfig, QnMode};
use rand::Rng as _;

fn cfg(p: usize, t: usize, beta: f64, h0: f64, mode: QnMode) -> LowerSolveConfig<f64> {
    LowerSolveConfig {
        beta,
        gamma: 1.0,
        warmup_steps: p,
        qn_steps: t,
        h0: InitScale::new(h0).unwrap(),
        mode,
        grad_tol: None,
        memory: None,
    }
}

fn spectrum_toy(seed: u64, n: usize, kappa: f64) -> QuadraticToy<f64> {
    let mut r = seeded(seed);
    let mut eig: Vec<f64> = (0..n).map(|_| r.random_range(1.0..kappa)).collect();
    eig[0] = 1.0;
    eig[n - 1] = kappa;
    QuadraticToy::from_spectrum(&eig, vec![0.0; n], seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stored_pairs_match_fresh_gradient_differences(seed in any::<u64>(), n in 2usize..=10, p in 0usize..4, t in 1usize..12) {
        let toy = make_toy::<f64>(n, seed).unwrap();
        let l = toy.constants().unwrap().l;
        let mut r = seeded(seed ^ 1);
        let x = gaussian_vec::<f64>(&mut r, n);
        let y0 = gaussian_vec::<f64>(&mut r, n);
        let res = solve_lower(&toy, &x, &y0, &cfg(p, t, 1.0 / l, 1.0 / l, QnMode::Bfgs)).unwrap();
        // replay the iterates: warm-up is plain gradient descent, then each pair advances y
        let mut y = gd_only(&toy, &x, &y0, 1.0 / l, p).unwrap();
        for pair in res.history.pairs() {
            let g0 = toy.ll_grad_y(&x, &y).unwrap();
            let y1: Vec<f64> = y.iter().zip(&pair.s).map(|(a, b)| a + b).collect();
            let g1 = toy.ll_grad_y(&x, &y1).unwrap();
            prop_assert!(rel_err(&pair.g, &sub(&g1, &g0), 1e-300) <= 1e-12);
            y = y1;
        }
        prop_assert!(res.history.len() <= t);
        prop_assert_eq!(res.grad_norm_trace.len(), p + t + 1);
    }

    #[test]
    fn warmup_never_increases_the_objective(seed in any::<u64>(), n in 2usize..=10, frac in 0.1f64..=1.0) {
        let toy = make_toy::<f64>(n, seed).unwrap();
        let l = toy.constants().unwrap().l;
        let mut r = seeded(seed ^ 2);
        let x = gaussian_vec::<f64>(&mut r, n);
        let mut y = gaussian_vec::<f64>(&mut r, n);
        let mut f = toy.ll_value(&x, &y).unwrap();
        for _ in 0..20 {
            y = gd_only(&toy, &x, &y, frac / l, 1).unwrap();
            let next = toy.ll_value(&x, &y).unwrap();
            prop_assert!(next <= f + 1e-12 * f.abs().max(1.0));
            f = next;
        }
    }

    #[test]
    fn gradient_descent_contracts_geometrically(seed in any::<u64>(), n in 2usize..=12) {
        let toy = make_toy::<f64>(n, seed).unwrap();
        let c = toy.constants().unwrap();
        let mut r = seeded(seed ^ 3);
        let x = gaussian_vec::<f64>(&mut r, n);
        let y0 = gaussian_vec::<f64>(&mut r, n);
        let ystar = toy.solve(&x);
        let y = gd_only(&toy, &x, &y0, 1.0 / c.l, 50).unwrap();
        let bound = (1.0 - c.mu / c.l).powi(50) * dist(&y0, &ystar);
        prop_assert!(dist(&y, &ystar) <= bound * (1.0 + 1e-9) + 1e-14);
    }

    #[test]
    fn identical_inputs_give_identical_results(seed in any::<u64>(), sr1 in any::<bool>()) {
        let toy = make_toy::<f64>(6, seed).unwrap();
        let mode = if sr1 { QnMode::Sr1 } else { QnMode::Bfgs };
        let x = gaussian_vec::<f64>(&mut seeded(seed), 6);
        let c = cfg(2, 8, 0.2, 0.3, mode);
        let a = solve_lower(&toy, &x, &[0.0; 6], &c).unwrap();
        let b = solve_lower(&toy, &x, &[0.0; 6], &c).unwrap();
        prop_assert!(a.y_final.iter().zip(&b.y_final).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert_eq!(a.history.len(), b.history.len());
    }
}

#[test]
fn superlinear_bound_on_quadratics() {
    let mut worst: f64 = 0.0;
    for seed in 0..40u64 {
        for n in [4usize, 8] {
            let kappa = 2.0 + (seed as f64) * 1.2;
            let toy = spectrum_toy(seed * 31 + n as u64, n, kappa);
            let mut r = seeded(seed ^ 0xabc);
            let x = gaussian_vec::<f64>(&mut r, n);
            let y0 = gaussian_vec::<f64>(&mut r, n);
            let ystar = toy.solve(&x);
            let e0 = dist(&y0, &ystar);
            let tb = 4.0 * n as f64 * kappa.ln();
            let start = tb.ceil() as usize;
            for t in start..=start + 10 {
                let res =
                    solve_lower(&toy, &x, &y0, &cfg(0, t, 1.0, 1.0 / kappa, QnMode::Bfgs)).unwrap();
                let bound = 2.0 * kappa.powf(1.5) * (tb / t as f64).powf(t as f64 / 2.0) * e0;
                let err = dist(&res.y_final, &ystar);
                assert!(err <= bound, "seed {seed} n {n} T {t}: {err:e} > {bound:e}");
                worst = worst.max(err / bound);
            }
        }
    }
    assert!(worst <= 1.0);
}

#[test]
fn gradient_calls_are_p_plus_t_plus_one() {
    let toy = make_toy::<f64>(7, 5).unwrap();
    let x = gaussian_vec::<f64>(&mut seeded(5), 7);
    for (p, t) in [(0, 0), (0, 5), (3, 0), (2, 9)] {
        let counted = Counted::new(&toy);
        let res = solve_lower(&counted, &x, &[1.0; 7], &cfg(p, t, 0.1, 0.2, QnMode::Bfgs)).unwrap();
        assert_eq!(counted.snapshot().ll_grad, (p + t + 1) as u64);
        assert_eq!(res.evals, p + t + 1);
        assert!(!res.stopped_early);
    }
}

#[test]
fn optimal_start_stays_put() {
    let toy = make_toy::<f64>(5, 2).unwrap();
    let x = gaussian_vec::<f64>(&mut seeded(2), 5);
    let ystar = toy.exact_lower_solve(&x, 0.0).unwrap();
    let mut c = cfg(0, 6, 0.1, 0.2, QnMode::Bfgs);
    c.grad_tol = Some(0.0);
    let res = solve_lower(&toy, &x, &ystar, &c).unwrap();
    assert!(dist(&res.y_final, &ystar) <= 1e-12 * norm(&ystar).max(1.0));
    assert!(res.history.len() <= 1);
}

#[test]
fn one_dimensional_warmup_is_exact() {
    let toy = QuadraticToy::from_spectrum(&[3.0], vec![0.0], 0).unwrap();
    let l = 3.0;
    let res = solve_lower(&toy, &[0.0], &[1.0], &cfg(1, 0, 1.0 / l, 1.0, QnMode::Bfgs)).unwrap();
    assert!(res.y_final[0].abs() < 1e-15);
}

#[test]
fn zero_steps_return_the_start() {
    let toy = make_toy::<f64>(3, 1).unwrap();
    assert_eq!(
        gd_only(&toy, &[0.0; 3], &[1.0, 2.0, 3.0], 0.1, 0).unwrap(),
        vec![1.0, 2.0, 3.0]
    );
    assert!(gd_only(&toy, &[0.0; 3], &[1.0; 3], 0.0, 1).is_err());
}

#[test]
fn early_stop_cuts_the_solve_short() {
    let toy = make_toy::<f64>(6, 4).unwrap();
    let x = gaussian_vec::<f64>(&mut seeded(4), 6);
    let l = toy.constants().unwrap().l;
    let mut c = cfg(1, 40, 1.0 / l, 1.0 / l, QnMode::Bfgs);
    c.grad_tol = Some(1e-6);
    let res = solve_lower(&toy, &x, &[0.0; 6], &c).unwrap();
    assert!(res.stopped_early);
    assert!(res.final_grad_norm() <= 1e-6);
    assert!(res.evals < 42);
}

#[test]
fn sr1_lower_solve_converges_on_quadratics() {
    let toy = make_toy::<f64>(8, 6).unwrap();
    let x = gaussian_vec::<f64>(&mut seeded(6), 8);
    let l = toy.constants().unwrap().l;
    let res = solve_lower(
        &toy,
        &x,
        &[0.0; 8],
        &cfg(1, 12, 1.0 / l, 1.0 / l, QnMode::Sr1),
    )
    .unwrap();
    assert!(dist(&res.y_final, &toy.solve(&x)) < 1e-8);
}

#[test]
fn smoothness_estimate_matches_largest_eigenvalue() {
    let toy = spectrum_toy(9, 6, 25.0);
    let lhat = estimate_smoothness(&toy, &[0.0; 6], &[0.0; 6], 200, 3).unwrap();
    assert!((lhat - 25.0).abs() / 25.0 < 1e-3, "{lhat}");
}
