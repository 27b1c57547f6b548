//! Estimates of `u ≈ [∇²ᵧᵧf(x, y)]⁻¹ d`, the inverse-Hessian action on the
//! upper-level gradient `d = ∇ᵧF(x, y)`.
//!
//! Two routes: reuse the pairs collected by the lower solver
//! ([`shared_pairs_direction`]), or build fresh pairs along the directions the
//! recursion itself proposes ([`subroutine_b`]). Fresh pairs are never mixed
//! into the lower solver's history.

use crate::error::{Phase, QnboError, Result};
use crate::kernels::{
    apply_inverse, CurvaturePair, InitScale, InverseOperator, PairHistory, QnMode,
};
use crate::linalg::{add, all_finite, check_dim, dist, norm, scaled, sub};
use crate::problem::BilevelProblem;
use crate::scalar::Scalar;

/// Step `ξᵢ` applied to `uᵢ` when forming the probe `s̃ᵢ = ξᵢuᵢ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiRule<T> {
    One,
    /// `ξᵢ = min(1, 1/‖uᵢ‖)`, so probes never leave the unit ball.
    NormU,
    Const(T),
}

impl<T: Scalar> XiRule<T> {
    /// The step for `u`, and whether the zero-norm fallback to 1 was taken.
    fn step(self, u: &[T]) -> (T, bool) {
        match self {
            XiRule::One => (T::one(), false),
            XiRule::Const(c) => (c, false),
            XiRule::NormU => {
                let nu = norm(u);
                if nu > T::zero() {
                    (T::one().min(T::one() / nu), false)
                } else {
                    (T::one(), true)
                }
            }
        }
    }
}

/// Which candidate `uᵢ` is returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// The final iterate `u_{Q−1}`.
    #[default]
    Last,
    /// The `uᵢ` with the smallest residual `‖∇²ᵧᵧf·uᵢ − d‖`; needs `hvp`.
    BestResidual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionConfig<T> {
    /// `Q`, the number of pairs built.
    pub q: usize,
    pub xi_rule: XiRule<T>,
    pub h0: InitScale<T>,
    pub mode: QnMode,
    pub selection: Selection,
    /// Compute the residual of the returned `u` even under `Selection::Last`
    /// (one extra `hvp`).
    pub report_residual: bool,
    /// Switch to an explicit `n × n` inverse once this many pairs are held;
    /// worthwhile when `Q` is well above the dimension.
    pub dense_after: Option<usize>,
}

impl<T: Scalar> Default for DirectionConfig<T> {
    fn default() -> Self {
        Self {
            q: 2,
            xi_rule: XiRule::One,
            h0: InitScale::identity(),
            mode: QnMode::Bfgs,
            selection: Selection::Last,
            report_residual: false,
            dense_after: None,
        }
    }
}

impl<T: Scalar> DirectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(QnboError::InvalidArgument("Q must be ≥ 1".into()));
        }
        if let XiRule::Const(c) = self.xi_rule {
            if !(c > T::zero()) || !c.is_finite() {
                return Err(QnboError::InvalidArgument(format!(
                    "ξ must be positive, got {c}"
                )));
            }
        }
        if self.dense_after == Some(0) {
            return Err(QnboError::InvalidArgument("dense_after must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult<T> {
    pub u: Vec<T>,
    /// Fresh curvature pairs (or solver iterations, for the baselines).
    pub pairs_built: usize,
    /// `‖∇²ᵧᵧf·u − d‖` when it was computed.
    pub residual: Option<T>,
    /// Times the `NormU` rule hit `‖uᵢ‖ = 0` and fell back to `ξᵢ = 1`.
    pub xi_fallbacks: usize,
    /// Index of the returned candidate.
    pub selected: usize,
}

/// `u = H d` from the lower solver's pairs.
pub fn shared_pairs_direction<T: Scalar>(
    d: &[T],
    h0: InitScale<T>,
    hist: &PairHistory<T>,
    mode: QnMode,
) -> Result<DirectionResult<T>> {
    if hist.is_empty() {
        return Err(QnboError::Precondition(
            "no curvature pairs to share (T = 0 or all rejected); use Q > 1".into(),
        ));
    }
    let u = apply_inverse(mode, d, h0, hist)?;
    Ok(DirectionResult {
        u,
        pairs_built: 0,
        residual: None,
        xi_fallbacks: 0,
        selected: 0,
    })
}

fn residual<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    u: &[T],
    d: &[T],
) -> Result<T> {
    Ok(dist(&problem.hvp(x, y, u)?, d))
}

/// Builds `Q` probe pairs `(ξᵢuᵢ, ∇ᵧf(x, y + ξᵢuᵢ) − ∇ᵧf(x, y))`, where each
/// `uᵢ` is the recursion applied to `d` with the pairs built so far
/// (`u₀ = H₀d`, or `warm_u` when given).
///
/// Gradient calls: one base gradient plus one per pair, `Q + 1` in total.
pub fn subroutine_b<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    d: &[T],
    cfg: &DirectionConfig<T>,
    warm_u: Option<&[T]>,
) -> Result<DirectionResult<T>> {
    cfg.validate()?;
    if cfg.q < 2 {
        return Err(QnboError::Precondition(
            "Q = 1 reuses the lower solver's pairs; call shared_pairs_direction".into(),
        ));
    }
    let n = problem.dim_y();
    check_dim(n, y.len(), "direction y")?;
    check_dim(n, d.len(), "direction d")?;
    if !all_finite(d) {
        return Err(QnboError::numerical(
            Phase::Direction,
            0,
            "non-finite direction d",
        ));
    }
    if cfg.selection == Selection::BestResidual && !problem.has_hvp() {
        return Err(QnboError::Unsupported(
            "best-residual selection needs hessian-vector products",
        ));
    }

    let base = problem.ll_grad_y(x, y)?;
    let mut op = InverseOperator::new(cfg.mode, cfg.h0, n, cfg.dense_after);
    let mut xi_fallbacks = 0;
    let mut best: Option<(T, usize, Vec<T>)> = None;
    let mut u = Vec::new();

    for i in 0..cfg.q {
        u = match (i, warm_u) {
            (0, Some(w)) => {
                check_dim(n, w.len(), "warm-start u")?;
                w.to_vec()
            }
            (0, None) => scaled(cfg.h0.get(), d),
            _ => op.apply(d)?,
        };
        if !all_finite(&u) {
            return Err(QnboError::numerical(Phase::Direction, i, "non-finite u"));
        }
        if cfg.selection == Selection::BestResidual {
            let r = residual(problem, x, y, &u, d)?;
            if best.as_ref().is_none_or(|(br, _, _)| r < *br) {
                best = Some((r, i, u.clone()));
            }
        }
        let (xi, fell_back) = cfg.xi_rule.step(&u);
        xi_fallbacks += usize::from(fell_back);
        let s = scaled(xi, &u);
        let g_probe = problem.ll_grad_y(x, &add(y, &s))?;
        if !all_finite(&g_probe) {
            return Err(QnboError::numerical(
                Phase::Direction,
                i,
                "non-finite probe gradient",
            ));
        }
        op.push(CurvaturePair::new(s, sub(&g_probe, &base))?)?;
    }

    let (u, residual, selected) = match best {
        Some((r, i, bu)) => (bu, Some(r), i),
        None => {
            let r = if cfg.report_residual && problem.has_hvp() {
                Some(residual(problem, x, y, &u, d)?)
            } else {
                None
            };
            (u, r, cfg.q - 1)
        }
    };
    Ok(DirectionResult {
        u,
        pairs_built: cfg.q,
        residual,
        xi_fallbacks,
        selected,
    })
}
