//! Classical inverse-Hessian-vector estimators used as reference points:
//! conjugate gradient on `∇²ᵧᵧf·z = d`, and the truncated Neumann series.
//! Both only touch the Hessian through `hvp`.

use crate::direction::DirectionResult;
use crate::error::{Phase, QnboError, Result};
use crate::linalg::{all_finite, axpy, check_dim, dot, norm};
use crate::problem::BilevelProblem;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig<T> {
    pub max_iters: usize,
    /// Stop when `‖r‖ ≤ residual_tol`; zero runs all `max_iters`.
    pub residual_tol: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannConfig<T> {
    pub terms: usize,
    /// Series scaling `η`, ideally `1/L̂`.
    pub step: T,
}

impl<T: Scalar> NeumannConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.terms == 0 {
            return Err(QnboError::InvalidArgument(
                "neumann terms must be ≥ 1".into(),
            ));
        }
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(QnboError::InvalidArgument(format!(
                "neumann step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }

    /// Whether `η·L̂ > 1`, outside the range where the series is known to converge.
    pub fn exceeds_stability(&self, l_hat: T) -> bool {
        self.step * l_hat > T::one()
    }
}

impl<T: Scalar> CgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(QnboError::InvalidArgument(
                "CG max_iters must be ≥ 1".into(),
            ));
        }
        if !(self.residual_tol >= T::zero()) {
            return Err(QnboError::InvalidArgument(
                "CG residual_tol must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Conjugate gradient from `z₀ = 0`.
pub fn cg_direction<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    d: &[T],
    cfg: &CgConfig<T>,
) -> Result<DirectionResult<T>> {
    cfg.validate()?;
    if !problem.has_hvp() {
        return Err(QnboError::Unsupported(
            "CG baseline needs hessian-vector products",
        ));
    }
    check_dim(problem.dim_y(), d.len(), "CG right-hand side")?;
    let mut z = vec![T::zero(); d.len()];
    let mut r = d.to_vec();
    let mut rr = dot(&r, &r);
    let mut p = r.clone();
    let mut iters = 0;
    while iters < cfg.max_iters && rr.sqrt() > cfg.residual_tol && rr > T::zero() {
        let ap = problem.hvp(x, y, &p)?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(QnboError::numerical(
                Phase::Baseline,
                iters,
                format!("CG curvature pᵀHp = {pap:e} is not positive; Hessian is not SPD"),
            ));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut z);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        iters += 1;
        if !all_finite(&z) {
            return Err(QnboError::numerical(
                Phase::Baseline,
                iters,
                "non-finite CG iterate",
            ));
        }
    }
    Ok(DirectionResult {
        u: z,
        pairs_built: iters,
        residual: Some(rr.sqrt()),
        xi_fallbacks: 0,
        selected: iters,
    })
}

/// `z = η Σ_{j<terms} (I − η∇²ᵧᵧf)ʲ d`, using `terms − 1` Hessian-vector products.
pub fn neumann_direction<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    d: &[T],
    cfg: &NeumannConfig<T>,
) -> Result<DirectionResult<T>> {
    cfg.validate()?;
    if !problem.has_hvp() {
        return Err(QnboError::Unsupported(
            "Neumann baseline needs hessian-vector products",
        ));
    }
    check_dim(problem.dim_y(), d.len(), "Neumann right-hand side")?;
    let mut term = d.to_vec();
    let mut acc = d.to_vec();
    let mut prev_norm = norm(&term);
    let mut growing = 0;
    for j in 1..cfg.terms {
        let h = problem.hvp(x, y, &term)?;
        axpy(-cfg.step, &h, &mut term);
        axpy(T::one(), &term, &mut acc);
        let tn = norm(&term);
        if !tn.is_finite() {
            return Err(QnboError::numerical(
                Phase::Baseline,
                j,
                "non-finite Neumann term",
            ));
        }
        growing = if tn > prev_norm { growing + 1 } else { 0 };
        if growing >= 3 {
            return Err(QnboError::numerical(
                Phase::Baseline,
                j,
                "Neumann series diverging (term norm grew 3 times in a row); reduce the step",
            ));
        }
        prev_norm = tn;
    }
    acc.iter_mut().for_each(|v| *v *= cfg.step);
    Ok(DirectionResult {
        u: acc,
        pairs_built: cfg.terms,
        residual: None,
        xi_fallbacks: 0,
        selected: cfg.terms - 1,
    })
}
