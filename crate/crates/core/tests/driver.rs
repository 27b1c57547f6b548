use qnbo::linalg::{dist, norm, rel_err};
use qnbo::lower::estimate_smoothness;
use qnbo::problems::{make_logreg, make_synthetic_classification, make_toy, QuadraticToy};
use qnbo::rng::{gaussian_vec, seeded};
use qnbo::{
    exact_hypergradient, fd_hypergradient, hypergradient_estimate, qnbo_solve, qnbo_step,
    solve_lower, subroutine_b, BilevelProblem, CgConfig, DirectionConfig, Estimator, InitScale,
    IterateState, LowerSolveConfig, QSchedule, QnMode, QnboConfig, QnboRun, TraceRecord, XiRule,
};

fn toy_config(toy: &QuadraticToy<f64>, k: usize) -> QnboConfig<f64> {
    let h0 = InitScale::new(1.0 / toy.constants().unwrap().l).unwrap();
    let lower = LowerSolveConfig {
        beta: 0.1,
        warmup_steps: 1,
        qn_steps: 15,
        h0,
        ..LowerSolveConfig::from_smoothness(1.0).unwrap()
    };
    let mut cfg = QnboConfig::new(0.1, lower, k);
    cfg.direction.dense_after = Some(toy.n());
    cfg
}

fn without_time(trace: &[TraceRecord<f64>]) -> Vec<String> {
    trace
        .iter()
        .map(|r| {
            format!(
                "{:?}",
                TraceRecord {
                    wall_ns: 0,
                    ..r.clone()
                }
            )
        })
        .collect()
}

#[test]
fn oracle_counts_follow_the_closed_form() {
    let toy = make_toy::<f64>(10, 2).unwrap();
    for (schedule, p, t) in [
        (QSchedule::Linear, 1, 15),
        (QSchedule::Const(1), 2, 5),
        (QSchedule::Const(4), 0, 3),
        (QSchedule::CappedLinear(3), 1, 4),
    ] {
        let mut cfg = toy_config(&toy, 9);
        cfg.q_schedule = schedule;
        cfg.lower.warmup_steps = p;
        cfg.lower.qn_steps = t;
        let out = qnbo_solve(&toy, vec![1.0; 10], vec![0.0; 10], &cfg).unwrap();
        let mut ll = 0u64;
        for (k, rec) in out.trace.iter().enumerate() {
            let q = schedule.q_at(k);
            ll += (p + t + 1) as u64 + if q > 1 { q as u64 + 1 } else { 0 };
            let c = rec.oracle_counts;
            assert_eq!(rec.k, k);
            assert_eq!(rec.q, q);
            assert_eq!(c.ll_grad, ll, "{schedule:?} k {k}");
            assert_eq!(c.ul_grad_x, k as u64 + 1);
            assert_eq!(c.ul_grad_y, k as u64 + 1);
            assert_eq!(c.ul_grad(), 2 * (k as u64 + 1));
            assert_eq!(c.jvp, k as u64 + 1);
            assert_eq!((c.hvp, c.ul_value, c.ll_value), (0, 0, 0));
        }
    }
}

#[test]
fn resumed_runs_reproduce_a_single_run() {
    let toy = make_toy::<f64>(12, 4).unwrap();
    for warm in [false, true] {
        let mut cfg = toy_config(&toy, 12);
        cfg.warm_start_u = warm;
        let whole = qnbo_solve(&toy, vec![2.0; 12], vec![2.0; 12], &cfg).unwrap();

        let mut run = QnboRun::new(&toy, vec![2.0; 12], vec![2.0; 12], cfg.clone()).unwrap();
        let mut trace = Vec::new();
        run.run_with(7, |r| trace.push(r.clone())).unwrap();
        let mut state = run.state().clone();
        for k in 7..12 {
            let (next, rec) = qnbo_step(&toy, &state, k, &cfg).unwrap();
            assert_eq!(
                rec.hypergrad_norm.to_bits(),
                whole.trace[k].hypergrad_norm.to_bits()
            );
            state = next;
        }
        assert_eq!(state, whole.state);
        assert_eq!(without_time(&trace), without_time(&whole.trace[..7]));
    }
}

#[test]
fn one_run_split_in_two_is_bit_identical() {
    let toy = make_toy::<f64>(8, 5).unwrap();
    let cfg = toy_config(&toy, 10);
    let whole = qnbo_solve(&toy, vec![1.5; 8], vec![0.0; 8], &cfg).unwrap();
    let mut run = QnboRun::new(&toy, vec![1.5; 8], vec![0.0; 8], cfg).unwrap();
    let mut trace = Vec::new();
    run.run_with(4, |r| trace.push(r.clone())).unwrap();
    run.run_with(6, |r| trace.push(r.clone())).unwrap();
    assert_eq!(without_time(&trace), without_time(&whole.trace));
    assert_eq!(run.state(), &whole.state);
}

#[test]
fn exact_inputs_give_the_exact_hypergradient() {
    let toy = make_toy::<f64>(20, 3).unwrap();
    let mut r = seeded(3);
    for _ in 0..10 {
        let x = gaussian_vec::<f64>(&mut r, 20);
        let ystar = toy.solve(&x);
        let ustar = toy.exact_u(&x, &ystar).unwrap();
        let est = hypergradient_estimate(&toy, &x, &ystar, &ustar).unwrap();
        let exact = exact_hypergradient(&toy, &x).unwrap();
        assert!(dist(&est, &exact) <= 1e-12 * norm(&exact).max(1.0));
        assert!(dist(&est, &toy.closed_form_hypergradient(&x)) <= 1e-10 * norm(&exact).max(1.0));
    }
}

#[test]
fn repeated_runs_are_identical() {
    let toy = make_toy::<f64>(10, 6).unwrap();
    for mode in [QnMode::Bfgs, QnMode::Sr1] {
        let cfg = toy_config(&toy, 15).with_mode(mode);
        let a = qnbo_solve(&toy, vec![1.0; 10], vec![0.0; 10], &cfg).unwrap();
        let b = qnbo_solve(&toy, vec![1.0; 10], vec![0.0; 10], &cfg).unwrap();
        assert_eq!(without_time(&a.trace), without_time(&b.trace));
    }
}

#[test]
fn optimum_is_a_fixed_point() {
    let toy = make_toy::<f64>(10, 7).unwrap();
    let (xs, ys) = toy.closed_form_optimum();
    let us = toy.exact_u(&xs, &ys).unwrap();
    let mut cfg = toy_config(&toy, 1);
    cfg.lower.grad_tol = Some(0.0);
    cfg.lower.qn_steps = 30;
    cfg.q_schedule = QSchedule::Const(150);
    let state = IterateState {
        x: xs.clone(),
        y: ys,
        u: us,
    };
    let (next, rec) = qnbo_step(&toy, &state, 0, &cfg).unwrap();
    assert!(rec.hypergrad_norm <= 1e-8, "{}", rec.hypergrad_norm);
    assert!(dist(&next.x, &xs) <= cfg.alpha * rec.hypergrad_norm + 1e-15);
}

#[test]
fn hypergradient_error_drops_tenfold_in_200_steps() {
    let toy = make_toy::<f64>(50, 1).unwrap();
    let cfg = toy_config(&toy, 200);
    let out = qnbo_solve(&toy, vec![2.0; 50], vec![2.0; 50], &cfg).unwrap();
    let first = out.trace[0].hypergrad_err.unwrap();
    let last = out.trace[199].hypergrad_err.unwrap();
    assert!(last * 10.0 <= first, "{first:e} → {last:e}");
    assert!(out
        .trace
        .windows(2)
        .all(|w| w[0].oracle_counts.ll_grad <= w[1].oracle_counts.ll_grad));
}

#[test]
fn logreg_estimate_matches_finite_differences() {
    let all = make_synthetic_classification::<f64>(400, 20, 2, 0.1, 11).unwrap();
    let all = all.to_signed_binary().unwrap();
    let (train, val) = all.split_at(200);
    let p = make_logreg(train, val).unwrap();
    for x in [-1.0, 0.0, 1.0] {
        let y0 = vec![0.0; p.dim_y()];
        let l = estimate_smoothness(&p, &[x], &y0, 100, 1).unwrap();
        let h0 = InitScale::new(1.0 / l).unwrap();
        let lower = LowerSolveConfig {
            h0,
            qn_steps: 200,
            mode: QnMode::Sr1,
            ..LowerSolveConfig::from_smoothness(l).unwrap()
        };
        let y = solve_lower(&p, &[x], &y0, &lower).unwrap().y_final;
        let d = p.ul_grad_y(&[x], &y).unwrap();
        // SR1 recovers the inverse from n + 1 pairs; tiny probes keep them near exact Hessian actions
        let dcfg = DirectionConfig {
            q: p.dim_y() + 2,
            xi_rule: XiRule::Const(1e-6),
            h0,
            mode: QnMode::Sr1,
            ..DirectionConfig::default()
        };
        let u = subroutine_b(&p, &[x], &y, &d, &dcfg, None).unwrap().u;
        let est = hypergradient_estimate(&p, &[x], &y, &u).unwrap();
        let fd = fd_hypergradient(&p, &[x], 1e-5).unwrap();
        let exact = exact_hypergradient(&p, &[x]).unwrap();
        assert!(
            rel_err(&exact, &fd, 1e-12) <= 1e-4,
            "x = {x}: {exact:?} vs {fd:?}"
        );
        assert!(
            rel_err(&est, &fd, 1e-12) <= 1e-4,
            "x = {x}: {est:?} vs {fd:?}"
        );
    }
}

#[test]
fn shared_pairs_need_quasi_newton_steps() {
    let toy = make_toy::<f64>(4, 1).unwrap();
    let mut cfg = toy_config(&toy, 3);
    cfg.lower.qn_steps = 0;
    assert!(qnbo_solve(&toy, vec![0.0; 4], vec![0.0; 4], &cfg).is_err());
    cfg.q_schedule = QSchedule::Const(3);
    assert!(qnbo_solve(&toy, vec![0.0; 4], vec![0.0; 4], &cfg).is_ok());
}

#[test]
fn cg_estimator_counts_hessian_products() {
    let toy = make_toy::<f64>(6, 2).unwrap();
    let mut cfg = toy_config(&toy, 5);
    cfg.estimator = Estimator::Cg(CgConfig {
        max_iters: 6,
        residual_tol: 0.0,
    });
    let out = qnbo_solve(&toy, vec![1.0; 6], vec![0.0; 6], &cfg).unwrap();
    let last = out.trace.last().unwrap();
    assert!(last.oracle_counts.hvp > 0 && last.oracle_counts.hvp <= 30);
    assert_eq!(last.oracle_counts.ll_grad, 5 * 17);
    assert!(last.hypergrad_err.unwrap() < 1e-8);
}

#[test]
fn f32_runs_track_f64() {
    let t64 = make_toy::<f64>(6, 3).unwrap();
    let t32 = make_toy::<f32>(6, 3).unwrap();
    let cfg64 = toy_config(&t64, 20);
    let lower32 = LowerSolveConfig {
        beta: 0.1f32,
        warmup_steps: 1,
        qn_steps: 15,
        h0: InitScale::new(cfg64.lower.h0.get() as f32).unwrap(),
        ..LowerSolveConfig::from_smoothness(1.0f32).unwrap()
    };
    let cfg32 = QnboConfig::new(0.1f32, lower32, 20);
    let a = qnbo_solve(&t64, vec![1.0; 6], vec![0.0; 6], &cfg64).unwrap();
    let b = qnbo_solve(&t32, vec![1.0; 6], vec![0.0; 6], &cfg32).unwrap();
    let x32: Vec<f64> = b.state.x.iter().map(|&v| v as f64).collect();
    assert!(rel_err(&x32, &a.state.x, 1e-6) < 1e-3);
}
