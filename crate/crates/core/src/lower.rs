//! Lower-level solver: `P` fixed-step gradient steps, then `T` quasi-Newton
//! steps whose curvature pairs are harvested for reuse.

use crate::error::{Phase, QnboError, Result};
use crate::kernels::{apply_inverse, CurvaturePair, InitScale, PairHistory, QnMode};
use crate::linalg::{all_finite, axpy, check_dim, norm, scaled, sub};
use crate::problem::BilevelProblem;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LowerSolveConfig<T> {
    /// Gradient step `β`.
    pub beta: T,
    /// Quasi-Newton step `γ`.
    pub gamma: T,
    /// `P`
    pub warmup_steps: usize,
    /// `T`
    pub qn_steps: usize,
    pub h0: InitScale<T>,
    pub mode: QnMode,
    /// Stop as soon as `‖∇ᵧf‖ ≤ tol`; `None` runs the full `P + T` steps.
    pub grad_tol: Option<T>,
    /// Keep at most this many pairs (limited-memory variant).
    pub memory: Option<usize>,
}

impl<T: Scalar> LowerSolveConfig<T> {
    /// `β = 1/L̂`, `γ = 1`, `P = 1`, `T = 15`, `H₀ = I`, BFGS, no early stop.
    pub fn from_smoothness(l_hat: T) -> Result<Self> {
        if !(l_hat > T::zero()) || !l_hat.is_finite() {
            return Err(QnboError::InvalidArgument(format!(
                "smoothness estimate must be positive, got {l_hat}"
            )));
        }
        Ok(Self {
            beta: T::one() / l_hat,
            gamma: T::one(),
            warmup_steps: 1,
            qn_steps: 15,
            h0: InitScale::identity(),
            mode: QnMode::Bfgs,
            grad_tol: None,
            memory: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: T| {
            Err(QnboError::InvalidArgument(format!(
                "{what} must be positive and finite, got {v}"
            )))
        };
        if !(self.beta > T::zero()) || !self.beta.is_finite() {
            return bad("beta", self.beta);
        }
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return bad("gamma", self.gamma);
        }
        if let Some(tol) = self.grad_tol {
            if !(tol >= T::zero()) {
                return Err(QnboError::InvalidArgument(format!(
                    "grad_tol must be ≥ 0, got {tol}"
                )));
            }
        }
        if self.memory == Some(0) {
            return Err(QnboError::InvalidArgument("memory must be ≥ 1".into()));
        }
        Ok(())
    }

    fn new_history(&self, dim: usize) -> Result<PairHistory<T>> {
        match self.memory {
            Some(m) => PairHistory::with_capacity_limit(dim, m),
            None => Ok(PairHistory::new(dim)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LowerSolveResult<T> {
    pub y_final: Vec<T>,
    pub history: PairHistory<T>,
    /// `‖∇ᵧf‖` at every evaluated iterate, starting with `y⁰`.
    pub grad_norm_trace: Vec<T>,
    /// Gradient-oracle calls made.
    pub evals: usize,
    /// Whether `grad_tol` cut the solve short.
    pub stopped_early: bool,
}

impl<T: Scalar> LowerSolveResult<T> {
    /// `‖∇ᵧf(x, y_final)‖`.
    pub fn final_grad_norm(&self) -> T {
        *self
            .grad_norm_trace
            .last()
            .expect("at least one gradient evaluated")
    }
}

fn checked_grad<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    phase: Phase,
    iteration: usize,
) -> Result<Vec<T>> {
    let g = problem.ll_grad_y(x, y)?;
    if !all_finite(&g) {
        return Err(QnboError::numerical(
            phase,
            iteration,
            "non-finite lower-level gradient",
        ));
    }
    Ok(g)
}

/// Runs the warm-up and quasi-Newton phases from `y0` at fixed `x`.
///
/// Makes exactly `P + T + 1` gradient calls unless `grad_tol` stops it early:
/// the gradient at the last warm-up iterate seeds the quasi-Newton phase, and
/// each quasi-Newton gradient serves both the pair and the next direction.
pub fn solve_lower<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y0: &[T],
    cfg: &LowerSolveConfig<T>,
) -> Result<LowerSolveResult<T>> {
    cfg.validate()?;
    check_dim(problem.dim_x(), x.len(), "lower solve x")?;
    check_dim(problem.dim_y(), y0.len(), "lower solve y0")?;

    let mut history = cfg.new_history(y0.len())?;
    let mut trace = Vec::with_capacity(cfg.warmup_steps + cfg.qn_steps + 1);
    let mut evals = 0;
    let mut y = y0.to_vec();
    let reached = |gn: T| cfg.grad_tol.is_some_and(|tol| gn <= tol);

    for j in 0..cfg.warmup_steps {
        let g = checked_grad(problem, x, &y, Phase::Warmup, j)?;
        evals += 1;
        let gn = norm(&g);
        trace.push(gn);
        if reached(gn) {
            return Ok(LowerSolveResult {
                y_final: y,
                history,
                grad_norm_trace: trace,
                evals,
                stopped_early: true,
            });
        }
        axpy(-cfg.beta, &g, &mut y);
        if !all_finite(&y) {
            return Err(QnboError::numerical(Phase::Warmup, j, "non-finite iterate"));
        }
    }

    let mut g = checked_grad(problem, x, &y, Phase::QuasiNewton, 0)?;
    evals += 1;
    trace.push(norm(&g));
    let mut stopped_early = reached(norm(&g));
    if !stopped_early {
        for t in 0..cfg.qn_steps {
            let d = if t == 0 {
                scaled(cfg.h0.get(), &g)
            } else {
                apply_inverse(cfg.mode, &g, cfg.h0, &history)?
            };
            let mut y_next = y.clone();
            axpy(-cfg.gamma, &d, &mut y_next);
            if !all_finite(&y_next) {
                return Err(QnboError::numerical(
                    Phase::QuasiNewton,
                    t,
                    "non-finite iterate",
                ));
            }
            let g_next = checked_grad(problem, x, &y_next, Phase::QuasiNewton, t + 1)?;
            evals += 1;
            let pair = CurvaturePair::new(sub(&y_next, &y), sub(&g_next, &g))?;
            history.push_pair(pair, cfg.mode)?;
            y = y_next;
            g = g_next;
            let gn = norm(&g);
            trace.push(gn);
            if reached(gn) {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(LowerSolveResult {
        y_final: y,
        history,
        grad_norm_trace: trace,
        evals,
        stopped_early,
    })
}

/// `steps` iterations of `y ← y − β∇ᵧf(x, y)`.
pub fn gd_only<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y0: &[T],
    beta: T,
    steps: usize,
) -> Result<Vec<T>> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(QnboError::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    check_dim(problem.dim_y(), y0.len(), "gradient descent y0")?;
    let mut y = y0.to_vec();
    for j in 0..steps {
        let g = checked_grad(problem, x, &y, Phase::Warmup, j)?;
        axpy(-beta, &g, &mut y);
        if !all_finite(&y) {
            return Err(QnboError::numerical(Phase::Warmup, j, "non-finite iterate"));
        }
    }
    Ok(y)
}

/// Estimates the lower-level smoothness constant `L` at `(x, y)` by power
/// iteration on finite gradient differences `(∇f(y + εv) − ∇f(y))/ε`.
///
/// Deterministic for a given `seed`. Only gradient calls are used (`iters + 1`).
pub fn estimate_smoothness<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    iters: usize,
    seed: u64,
) -> Result<T> {
    check_dim(problem.dim_y(), y.len(), "smoothness estimate y")?;
    let eps = T::lit(1e-4) * norm(y).max(T::one());
    let base = problem.ll_grad_y(x, y)?;
    let mut r = rng::seeded(seed);
    let mut v = rng::unit_vec::<T>(&mut r, y.len());
    let mut lambda = T::zero();
    for _ in 0..iters.max(1) {
        let mut probe = y.to_vec();
        axpy(eps, &v, &mut probe);
        let w = scaled(T::one() / eps, &sub(&problem.ll_grad_y(x, &probe)?, &base));
        let nw = norm(&w);
        if !(nw > T::zero()) || !nw.is_finite() {
            break;
        }
        lambda = nw;
        v = scaled(T::one() / nw, &w);
    }
    if lambda > T::zero() {
        Ok(lambda)
    } else {
        Err(QnboError::numerical(
            Phase::Oracle,
            0,
            "smoothness estimate degenerated",
        ))
    }
}
