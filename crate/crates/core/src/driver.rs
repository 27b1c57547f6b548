//! Outer loop: lower solve, inverse-Hessian direction, hypergradient step.
//!
//! Per outer step `k` with `Q = Q_k`:
//!
//! 1. `y_{k+1}` from [`solve_lower`] warm-started at `y_k`;
//! 2. `u_{k+1}` from the shared lower-level pairs when `Q = 1`, otherwise from
//!    [`subroutine_b`] with `Q` fresh pairs (or from a baseline estimator);
//! 3. `x_{k+1} = x_k − α(∇ₓF(x_k, y_{k+1}) − [∇²ₓᵧf(x_k, y_{k+1})]ᵀu_{k+1})`.

use std::time::Instant;

use crate::baselines::{cg_direction, neumann_direction, CgConfig, NeumannConfig};
use crate::direction::{shared_pairs_direction, subroutine_b, DirectionConfig, DirectionResult};
use crate::error::{Phase, QnboError, Result};
use crate::kernels::QnMode;
use crate::linalg::{all_finite, axpy, check_dim, dist, norm, sub};
use crate::lower::{solve_lower, LowerSolveConfig};
use crate::problem::{BilevelProblem, Counted, OracleCounts};
use crate::scalar::Scalar;

/// How `Q_k` evolves with the outer index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QSchedule {
    Const(usize),
    /// `Q_k = k + 1`
    Linear,
    /// `Q_k = min(k + 1, cap)`
    CappedLinear(usize),
}

impl QSchedule {
    pub fn q_at(self, k: usize) -> usize {
        match self {
            QSchedule::Const(q) => q,
            QSchedule::Linear => k + 1,
            QSchedule::CappedLinear(cap) => (k + 1).min(cap),
        }
    }

    fn ever_one(self) -> bool {
        match self {
            QSchedule::Const(q) => q == 1,
            QSchedule::Linear | QSchedule::CappedLinear(_) => true,
        }
    }
}

/// Source of `u_{k+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator<T> {
    QuasiNewton,
    Cg(CgConfig<T>),
    Neumann(NeumannConfig<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnboConfig<T> {
    /// Outer step `α`.
    pub alpha: T,
    pub lower: LowerSolveConfig<T>,
    /// Template for fresh-pair directions; `q` is overwritten by `q_schedule`.
    pub direction: DirectionConfig<T>,
    pub q_schedule: QSchedule,
    /// `K`
    pub outer_steps: usize,
    /// Must agree with `lower.mode` and `direction.mode`.
    pub mode: QnMode,
    /// Seed fresh-pair directions with the previous `u` instead of `H₀d`.
    pub warm_start_u: bool,
    pub estimator: Estimator<T>,
    /// Evaluate the exact hypergradient and distances each step (needs exact oracles).
    pub exact_diagnostics: bool,
}

impl<T: Scalar> QnboConfig<T> {
    /// Linear `Q_k` schedule, no `u` warm start, exact diagnostics on.
    pub fn new(alpha: T, lower: LowerSolveConfig<T>, outer_steps: usize) -> Self {
        let mode = lower.mode;
        Self {
            alpha,
            direction: DirectionConfig {
                h0: lower.h0,
                mode,
                ..DirectionConfig::default()
            },
            lower,
            q_schedule: QSchedule::Linear,
            outer_steps,
            mode,
            warm_start_u: false,
            estimator: Estimator::QuasiNewton,
            exact_diagnostics: true,
        }
    }

    /// Sets the quasi-Newton flavour everywhere it appears.
    pub fn with_mode(mut self, mode: QnMode) -> Self {
        self.mode = mode;
        self.lower.mode = mode;
        self.direction.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) || !self.alpha.is_finite() {
            return Err(QnboError::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.outer_steps == 0 {
            return Err(QnboError::InvalidArgument("outer_steps must be ≥ 1".into()));
        }
        match self.q_schedule {
            QSchedule::Const(0) => {
                return Err(QnboError::InvalidArgument("constant Q must be ≥ 1".into()))
            }
            QSchedule::CappedLinear(0) => {
                return Err(QnboError::InvalidArgument("Q cap must be ≥ 1".into()))
            }
            _ => {}
        }
        if self.lower.mode != self.mode || self.direction.mode != self.mode {
            return Err(QnboError::InvalidArgument(
                "lower and direction modes must match the solver mode".into(),
            ));
        }
        self.lower.validate()?;
        self.direction.validate()?;
        match self.estimator {
            Estimator::QuasiNewton => {
                if self.q_schedule.ever_one() && self.lower.qn_steps == 0 {
                    return Err(QnboError::InvalidArgument(
                        "Q_k = 1 shares lower-level pairs, which needs qn_steps ≥ 1".into(),
                    ));
                }
            }
            Estimator::Cg(c) => c.validate()?,
            Estimator::Neumann(c) => c.validate()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
}

impl<T: Scalar> IterateState<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Self {
        let u = vec![T::zero(); y.len()];
        Self { x, y, u }
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.x) && all_finite(&self.y) && all_finite(&self.u)
    }
}

/// Diagnostics for outer step `k`. Oracle counts and wall time are cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T> {
    pub k: usize,
    pub q: usize,
    /// `‖∇̃Φ(x_k)‖`
    pub hypergrad_norm: T,
    /// `‖∇̃Φ(x_k) − ∇Φ(x_k)‖`
    pub hypergrad_err: Option<T>,
    /// `‖∇Φ(x_k)‖`
    pub exact_grad_norm: Option<T>,
    /// `‖x_{k+1} − x*‖`
    pub x_dist: Option<T>,
    /// `‖y_{k+1} − y*‖`
    pub y_dist: Option<T>,
    /// `‖∇ᵧf(x_k, y_{k+1})‖`
    pub f_grad_norm: T,
    pub pairs_shared: usize,
    pub pairs_rejected: usize,
    pub direction_residual: Option<T>,
    pub oracle_counts: OracleCounts,
    pub wall_ns: u64,
}

/// `∇ₓF(x, y) − [∇²ₓᵧf(x, y)]ᵀu`: one `∇ₓF` call and one `jvp` call.
pub fn hypergradient_estimate<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y_next: &[T],
    u_next: &[T],
) -> Result<Vec<T>> {
    check_dim(problem.dim_x(), x.len(), "hypergradient x")?;
    check_dim(problem.dim_y(), y_next.len(), "hypergradient y")?;
    check_dim(problem.dim_y(), u_next.len(), "hypergradient u")?;
    let gx = problem.ul_grad_x(x, y_next)?;
    let jv = problem.jvp(x, y_next, u_next)?;
    check_dim(problem.dim_x(), jv.len(), "jvp output")?;
    Ok(sub(&gx, &jv))
}

/// Tolerance used for reference inner solves.
pub fn reference_tol<T: Scalar>() -> T {
    T::lit(1e-12).max(T::lit(100.0) * T::epsilon())
}

/// `∇Φ(x) = ∇ₓF(x, y*) − [∇²ₓᵧf]ᵀ[∇²ᵧᵧf]⁻¹∇ᵧF(x, y*)` at `y* = y*(x)`,
/// from the problem's exact oracles.
pub fn exact_hypergradient<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
) -> Result<Vec<T>> {
    let ystar = problem.exact_lower_solve(x, reference_tol())?;
    let ustar = problem.exact_u(x, &ystar)?;
    hypergradient_estimate(problem, x, &ystar, &ustar)
}

/// `Φ(x) = F(x, y*(x))` with a reference inner solve.
pub fn phi_value<T: Scalar, P: BilevelProblem<T> + ?Sized>(problem: &P, x: &[T]) -> Result<T> {
    let ystar = problem.exact_lower_solve(x, reference_tol())?;
    problem.ul_value(x, &ystar)
}

/// Central differences of `Φ` with step `h`, one pair of reference inner
/// solves per coordinate.
pub fn fd_hypergradient<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    h: T,
) -> Result<Vec<T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(QnboError::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    check_dim(problem.dim_x(), x.len(), "finite-difference x")?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = phi_value(problem, &probe)?;
        probe[j] = x[j] - h;
        let minus = phi_value(problem, &probe)?;
        probe[j] = x[j];
        out.push((plus - minus) / (T::lit(2.0) * h));
    }
    Ok(out)
}

struct StepOutput<T> {
    state: IterateState<T>,
    hypergrad: Vec<T>,
    q: usize,
    f_grad_norm: T,
    pairs_shared: usize,
    pairs_rejected: usize,
    residual: Option<T>,
}

fn step_core<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    state: &IterateState<T>,
    k: usize,
    cfg: &QnboConfig<T>,
) -> Result<StepOutput<T>> {
    let q = cfg.q_schedule.q_at(k);
    let lower = solve_lower(problem, &state.x, &state.y, &cfg.lower)?;
    let y_next = lower.y_final.clone();
    let d = problem.ul_grad_y(&state.x, &y_next)?;
    if !all_finite(&d) {
        return Err(QnboError::numerical(
            Phase::Direction,
            0,
            "non-finite upper-level gradient",
        ));
    }
    let dir: DirectionResult<T> = match cfg.estimator {
        Estimator::QuasiNewton if q == 1 => {
            shared_pairs_direction(&d, cfg.lower.h0, &lower.history, cfg.mode)?
        }
        Estimator::QuasiNewton => {
            let dcfg = DirectionConfig {
                q,
                ..cfg.direction.clone()
            };
            let warm =
                (cfg.warm_start_u && norm(&state.u) > T::zero()).then_some(state.u.as_slice());
            subroutine_b(problem, &state.x, &y_next, &d, &dcfg, warm)?
        }
        Estimator::Cg(c) => cg_direction(problem, &state.x, &y_next, &d, &c)?,
        Estimator::Neumann(c) => neumann_direction(problem, &state.x, &y_next, &d, &c)?,
    };
    let hg = hypergradient_estimate(problem, &state.x, &y_next, &dir.u)?;
    if !all_finite(&hg) {
        return Err(QnboError::numerical(
            Phase::Hypergradient,
            0,
            "non-finite hypergradient estimate",
        ));
    }
    let mut x_next = state.x.clone();
    axpy(-cfg.alpha, &hg, &mut x_next);
    Ok(StepOutput {
        state: IterateState {
            x: x_next,
            y: y_next,
            u: dir.u,
        },
        hypergrad: hg,
        q: if matches!(cfg.estimator, Estimator::QuasiNewton) {
            q
        } else {
            0
        },
        f_grad_norm: lower.final_grad_norm(),
        pairs_shared: if q == 1 { lower.history.len() } else { 0 },
        pairs_rejected: lower.history.rejected(),
        residual: dir.residual,
    })
}

/// A resumable run: owns the iterate, the outer index and the cumulative
/// oracle tallies, so that `K₁` steps followed by `K₂` more reproduce a
/// `K₁ + K₂` run exactly (wall times aside).
pub struct QnboRun<'p, T: Scalar, P: BilevelProblem<T> + ?Sized> {
    problem: &'p P,
    cfg: QnboConfig<T>,
    state: IterateState<T>,
    k: usize,
    counts: OracleCounts,
    elapsed_ns: u64,
    optimum: Option<(Vec<T>, Vec<T>)>,
}

impl<'p, T: Scalar, P: BilevelProblem<T> + ?Sized> QnboRun<'p, T, P> {
    pub fn new(problem: &'p P, x0: Vec<T>, y0: Vec<T>, cfg: QnboConfig<T>) -> Result<Self> {
        Self::resume(problem, IterateState::new(x0, y0), cfg)
    }

    pub fn resume(problem: &'p P, state: IterateState<T>, cfg: QnboConfig<T>) -> Result<Self> {
        cfg.validate()?;
        check_dim(problem.dim_x(), state.x.len(), "initial x")?;
        check_dim(problem.dim_y(), state.y.len(), "initial y")?;
        check_dim(problem.dim_y(), state.u.len(), "initial u")?;
        if !state.is_finite() {
            return Err(QnboError::InvalidArgument(
                "initial state is not finite".into(),
            ));
        }
        let optimum = if cfg.exact_diagnostics {
            problem.optimum()
        } else {
            None
        };
        Ok(Self {
            problem,
            cfg,
            state,
            k: 0,
            counts: OracleCounts::default(),
            elapsed_ns: 0,
            optimum,
        })
    }

    pub fn state(&self) -> &IterateState<T> {
        &self.state
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> OracleCounts {
        self.counts
    }

    pub fn config(&self) -> &QnboConfig<T> {
        &self.cfg
    }

    /// Runs outer step `k` and advances the state.
    pub fn step(&mut self) -> Result<TraceRecord<T>> {
        let k = self.k;
        let counted = Counted::starting_from(self.problem, self.counts);
        let start = Instant::now();
        let out =
            step_core(&counted, &self.state, k, &self.cfg).map_err(|e| e.at_outer_iteration(k))?;
        self.elapsed_ns += start.elapsed().as_nanos() as u64;
        self.counts = counted.snapshot();

        let exact = if self.cfg.exact_diagnostics {
            Some(
                exact_hypergradient(self.problem, &self.state.x)
                    .map_err(|e| e.at_outer_iteration(k))?,
            )
        } else {
            None
        };
        let record = TraceRecord {
            k,
            q: out.q,
            hypergrad_norm: norm(&out.hypergrad),
            hypergrad_err: exact.as_ref().map(|g| dist(&out.hypergrad, g)),
            exact_grad_norm: exact.as_ref().map(|g| norm(g)),
            x_dist: self.optimum.as_ref().map(|(xs, _)| dist(&out.state.x, xs)),
            y_dist: self.optimum.as_ref().map(|(_, ys)| dist(&out.state.y, ys)),
            f_grad_norm: out.f_grad_norm,
            pairs_shared: out.pairs_shared,
            pairs_rejected: out.pairs_rejected,
            direction_residual: out.residual,
            oracle_counts: self.counts,
            wall_ns: self.elapsed_ns,
        };
        self.state = out.state;
        self.k += 1;
        Ok(record)
    }

    /// Runs up to `steps` outer steps, handing each record to `sink` as it is produced.
    pub fn run_with<F: FnMut(&TraceRecord<T>)>(&mut self, steps: usize, mut sink: F) -> Result<()> {
        for _ in 0..steps {
            let rec = self.step()?;
            sink(&rec);
        }
        Ok(())
    }
}

/// A finished (or aborted) run.
#[derive(Debug, Clone)]
pub struct QnboOutcome<T> {
    pub trace: Vec<TraceRecord<T>>,
    pub state: IterateState<T>,
}

/// Failure after zero or more successful steps.
#[derive(Debug, thiserror::Error)]
#[error("{error} (after {} completed outer steps)", trace.len())]
pub struct SolveFailure<T: std::fmt::Debug> {
    #[source]
    pub error: QnboError,
    pub trace: Vec<TraceRecord<T>>,
}

/// `K` outer steps from `(x0, y0)`.
pub fn qnbo_solve<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x0: Vec<T>,
    y0: Vec<T>,
    cfg: &QnboConfig<T>,
) -> std::result::Result<QnboOutcome<T>, SolveFailure<T>> {
    let mut run = QnboRun::new(problem, x0, y0, cfg.clone()).map_err(|error| SolveFailure {
        error,
        trace: Vec::new(),
    })?;
    let mut trace = Vec::with_capacity(cfg.outer_steps);
    for _ in 0..cfg.outer_steps {
        match run.step() {
            Ok(rec) => trace.push(rec),
            Err(error) => return Err(SolveFailure { error, trace }),
        }
    }
    Ok(QnboOutcome {
        trace,
        state: run.state,
    })
}

/// One outer step from `state` at index `k`, with oracle counts for this step only.
pub fn qnbo_step<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    state: &IterateState<T>,
    k: usize,
    cfg: &QnboConfig<T>,
) -> Result<(IterateState<T>, TraceRecord<T>)> {
    let mut run = QnboRun::resume(problem, state.clone(), cfg.clone())?;
    run.k = k;
    let rec = run.step()?;
    Ok((run.state, rec))
}
