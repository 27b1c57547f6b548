//! The bilevel oracle interface
//!
//! `min_x Φ(x) = F(x, y*(x))` with `y*(x) = argmin_y f(x, y)` strongly convex in `y`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Phase, QnboError, Result};
use crate::linalg::{check_dim, norm, DenseMatrix};
use crate::scalar::Scalar;

/// Strong-convexity and smoothness constants of the lower-level objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerConstants<T> {
    pub mu: T,
    pub l: T,
}

impl<T: Scalar> LowerConstants<T> {
    pub fn condition_number(&self) -> T {
        self.l / self.mu
    }
}

/// Oracle bundle for a bilevel problem.
///
/// Every oracle must be a pure function of its arguments; the sweep runner
/// evaluates independent problems from several threads, hence the `Sync`
/// bound. `jvp(x, y, u)` is the mixed-derivative contraction
/// `[∇²ₓᵧf(x, y)]ᵀu` and returns a vector of dimension `dim_x`.
pub trait BilevelProblem<T: Scalar>: Sync {
    fn name(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    fn ul_value(&self, x: &[T], y: &[T]) -> Result<T>;
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Result<Vec<T>>;
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>>;

    fn ll_value(&self, x: &[T], y: &[T]) -> Result<T>;
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>>;

    fn jvp(&self, x: &[T], y: &[T], u: &[T]) -> Result<Vec<T>>;

    /// `∇²ᵧᵧf(x, y)·v`
    fn hvp(&self, _x: &[T], _y: &[T], _v: &[T]) -> Result<Vec<T>> {
        Err(QnboError::Unsupported("hessian-vector product"))
    }

    fn has_hvp(&self) -> bool {
        false
    }

    /// `y*(x)` to `‖∇ᵧf‖ ≤ tol`.
    fn exact_lower_solve(&self, _x: &[T], _tol: T) -> Result<Vec<T>> {
        Err(QnboError::Unsupported("exact lower-level solve"))
    }

    /// `[∇²ᵧᵧf(x, y)]⁻¹ ∇ᵧF(x, y)`; the default assembles the Hessian
    /// column by column from `hvp` and solves with a Cholesky factorization.
    fn exact_u(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        let h = dense_hessian(self, x, y)?;
        let rhs = self.ul_grad_y(x, y)?;
        Ok(h.cholesky()?.solve(&rhs))
    }

    fn constants(&self) -> Option<LowerConstants<T>> {
        None
    }

    /// Known solution `(x*, y*(x*))`, for distance diagnostics.
    fn optimum(&self) -> Option<(Vec<T>, Vec<T>)> {
        None
    }
}

/// Dense `∇²ᵧᵧf(x, y)` assembled from `dim_y` Hessian-vector products.
pub fn dense_hessian<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
) -> Result<DenseMatrix<T>> {
    let n = problem.dim_y();
    let mut e = vec![T::zero(); n];
    let mut h = DenseMatrix::from_columns(n, n, |j| {
        e[j] = T::one();
        let col = problem.hvp(x, y, &e);
        e[j] = T::zero();
        col
    })?;
    h.symmetrize();
    Ok(h)
}

/// Damped Newton on the lower-level objective, with an Armijo backtracking
/// line search. Intended for reference oracles at test scale.
pub fn newton_lower_solve<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y0: &[T],
    tol: T,
    max_iters: usize,
) -> Result<Vec<T>> {
    check_dim(problem.dim_y(), y0.len(), "newton start point")?;
    let mut y = y0.to_vec();
    let mut fy = problem.ll_value(x, &y)?;
    let mut g = problem.ll_grad_y(x, &y)?;
    let mut gnorm = norm(&g);
    // rounding floor: Newton stagnating below this is as converged as it gets
    let floor = T::epsilon().sqrt() * gnorm.max(T::one());
    for it in 0..max_iters {
        if gnorm <= tol {
            return Ok(y);
        }
        let h = dense_hessian(problem, x, &y)?;
        let step = h.cholesky()?.solve(&g);
        let slope = crate::linalg::dot(&g, &step);
        let mut t = T::one();
        let mut next = None;
        for _ in 0..60 {
            let trial: Vec<T> = y.iter().zip(&step).map(|(&a, &b)| a - t * b).collect();
            let ft = problem.ll_value(x, &trial)?;
            let rounding = T::lit(8.0) * T::epsilon() * fy.abs().max(T::one());
            if ft <= fy - T::lit(1e-4) * t * slope || ft <= fy + rounding {
                next = Some((trial, ft));
                break;
            }
            t *= T::lit(0.5);
        }
        let Some((trial, ft)) = next else {
            return Err(QnboError::numerical(
                Phase::Oracle,
                it,
                "newton line search failed",
            ));
        };
        let g_next = problem.ll_grad_y(x, &trial)?;
        let gn_next = norm(&g_next);
        if gn_next > T::lit(0.5) * gnorm && gnorm <= floor {
            return Ok(if gn_next < gnorm { trial } else { y });
        }
        y = trial;
        fy = ft;
        g = g_next;
        gnorm = gn_next;
    }
    if gnorm <= tol.max(floor) {
        Ok(y)
    } else {
        Err(QnboError::numerical(
            Phase::Oracle,
            max_iters,
            format!("newton did not reach tolerance, ‖∇f‖ = {gnorm:e}"),
        ))
    }
}

/// Per-oracle call tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCounts {
    pub ll_grad: u64,
    pub ul_grad_x: u64,
    pub ul_grad_y: u64,
    pub jvp: u64,
    pub hvp: u64,
    pub ul_value: u64,
    pub ll_value: u64,
}

impl OracleCounts {
    /// Upper-level gradient evaluations, `∇ₓF` and `∇ᵧF` counted separately.
    pub fn ul_grad(&self) -> u64 {
        self.ul_grad_x + self.ul_grad_y
    }

    pub fn delta(&self, earlier: &OracleCounts) -> OracleCounts {
        OracleCounts {
            ll_grad: self.ll_grad - earlier.ll_grad,
            ul_grad_x: self.ul_grad_x - earlier.ul_grad_x,
            ul_grad_y: self.ul_grad_y - earlier.ul_grad_y,
            jvp: self.jvp - earlier.jvp,
            hvp: self.hvp - earlier.hvp,
            ul_value: self.ul_value - earlier.ul_value,
            ll_value: self.ll_value - earlier.ll_value,
        }
    }
}

#[derive(Debug, Default)]
struct AtomicCounts {
    ll_grad: AtomicU64,
    ul_grad_x: AtomicU64,
    ul_grad_y: AtomicU64,
    jvp: AtomicU64,
    hvp: AtomicU64,
    ul_value: AtomicU64,
    ll_value: AtomicU64,
}

/// Wraps a problem and tallies every oracle call made through it.
pub struct Counted<'a, P: ?Sized> {
    inner: &'a P,
    counts: AtomicCounts,
}

impl<'a, P: ?Sized> Counted<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            counts: AtomicCounts::default(),
        }
    }

    /// Resumes counting from an earlier snapshot.
    pub fn starting_from(inner: &'a P, start: OracleCounts) -> Self {
        let c = Self::new(inner);
        c.counts.ll_grad.store(start.ll_grad, Ordering::Relaxed);
        c.counts.ul_grad_x.store(start.ul_grad_x, Ordering::Relaxed);
        c.counts.ul_grad_y.store(start.ul_grad_y, Ordering::Relaxed);
        c.counts.jvp.store(start.jvp, Ordering::Relaxed);
        c.counts.hvp.store(start.hvp, Ordering::Relaxed);
        c.counts.ul_value.store(start.ul_value, Ordering::Relaxed);
        c.counts.ll_value.store(start.ll_value, Ordering::Relaxed);
        c
    }

    pub fn inner(&self) -> &'a P {
        self.inner
    }

    pub fn snapshot(&self) -> OracleCounts {
        OracleCounts {
            ll_grad: self.counts.ll_grad.load(Ordering::Relaxed),
            ul_grad_x: self.counts.ul_grad_x.load(Ordering::Relaxed),
            ul_grad_y: self.counts.ul_grad_y.load(Ordering::Relaxed),
            jvp: self.counts.jvp.load(Ordering::Relaxed),
            hvp: self.counts.hvp.load(Ordering::Relaxed),
            ul_value: self.counts.ul_value.load(Ordering::Relaxed),
            ll_value: self.counts.ll_value.load(Ordering::Relaxed),
        }
    }
}

#[inline]
fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl<T: Scalar, P: BilevelProblem<T> + ?Sized> BilevelProblem<T> for Counted<'_, P> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn ul_value(&self, x: &[T], y: &[T]) -> Result<T> {
        bump(&self.counts.ul_value);
        self.inner.ul_value(x, y)
    }
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        bump(&self.counts.ul_grad_x);
        self.inner.ul_grad_x(x, y)
    }
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        bump(&self.counts.ul_grad_y);
        self.inner.ul_grad_y(x, y)
    }
    fn ll_value(&self, x: &[T], y: &[T]) -> Result<T> {
        bump(&self.counts.ll_value);
        self.inner.ll_value(x, y)
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        bump(&self.counts.ll_grad);
        self.inner.ll_grad_y(x, y)
    }
    fn jvp(&self, x: &[T], y: &[T], u: &[T]) -> Result<Vec<T>> {
        bump(&self.counts.jvp);
        self.inner.jvp(x, y, u)
    }
    fn hvp(&self, x: &[T], y: &[T], v: &[T]) -> Result<Vec<T>> {
        bump(&self.counts.hvp);
        self.inner.hvp(x, y, v)
    }
    fn has_hvp(&self) -> bool {
        self.inner.has_hvp()
    }
    fn exact_lower_solve(&self, x: &[T], tol: T) -> Result<Vec<T>> {
        self.inner.exact_lower_solve(x, tol)
    }
    fn exact_u(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.inner.exact_u(x, y)
    }
    fn constants(&self) -> Option<LowerConstants<T>> {
        self.inner.constants()
    }
    fn optimum(&self) -> Option<(Vec<T>, Vec<T>)> {
        self.inner.optimum()
    }
}
