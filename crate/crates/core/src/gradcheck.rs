//! Central-difference checks of a problem's analytic oracles.

use crate::error::{QnboError, Result};
use crate::linalg::{check_dim, rel_err};
use crate::problem::BilevelProblem;
use crate::scalar::Scalar;

/// Worst relative error of each oracle against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub ul_grad_x: f64,
    pub ul_grad_y: f64,
    pub ll_grad_y: f64,
    pub jvp: f64,
    pub hvp: Option<f64>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        [
            self.ul_grad_x,
            self.ul_grad_y,
            self.ll_grad_y,
            self.jvp,
            self.hvp.unwrap_or(0.0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn fd_vec<T: Scalar>(
    at: &[T],
    h: T,
    mut f: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<Vec<Vec<T>>> {
    let mut probe = at.to_vec();
    let mut cols = Vec::with_capacity(at.len());
    for j in 0..at.len() {
        probe[j] = at[j] + h;
        let plus = f(&probe)?;
        probe[j] = at[j] - h;
        let minus = f(&probe)?;
        probe[j] = at[j];
        cols.push(
            plus.iter()
                .zip(&minus)
                .map(|(&p, &m)| (p - m) / (T::lit(2.0) * h))
                .collect(),
        );
    }
    Ok(cols)
}

fn fd_grad<T: Scalar>(at: &[T], h: T, mut f: impl FnMut(&[T]) -> Result<T>) -> Result<Vec<T>> {
    Ok(fd_vec(at, h, |p| Ok(vec![f(p)?]))?
        .into_iter()
        .map(|c| c[0])
        .collect())
}

/// Compares every analytic oracle at `(x, y)` against central differences with
/// step `h`, contracting mixed and second derivatives with `v` (length `dim_y`).
pub fn check_oracles<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    v: &[T],
    h: T,
) -> Result<GradCheckReport> {
    if !(h > T::zero()) {
        return Err(QnboError::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    check_dim(problem.dim_x(), x.len(), "gradcheck x")?;
    check_dim(problem.dim_y(), y.len(), "gradcheck y")?;
    check_dim(problem.dim_y(), v.len(), "gradcheck v")?;
    let floor = T::lit(1e-8);
    let err = |a: &[T], b: &[T]| rel_err(a, b, floor).to_f64_lossy();

    let fd_ux = fd_grad(x, h, |p| problem.ul_value(p, y))?;
    let fd_uy = fd_grad(y, h, |p| problem.ul_value(x, p))?;
    let fd_ly = fd_grad(y, h, |p| problem.ll_value(x, p))?;
    // jvp(x, y, v)_j = ∂/∂x_j ⟨∇ᵧf(x, y), v⟩
    let fd_jv = fd_grad(x, h, |p| {
        Ok(crate::linalg::dot(&problem.ll_grad_y(p, y)?, v))
    })?;

    let hvp = if problem.has_hvp() {
        let cols = fd_vec(y, h, |p| problem.ll_grad_y(x, p))?;
        let n = y.len();
        let fd_hv: Vec<T> = (0..n)
            .map(|i| (0..n).map(|j| cols[j][i] * v[j]).sum())
            .collect();
        Some(err(&problem.hvp(x, y, v)?, &fd_hv))
    } else {
        None
    };

    Ok(GradCheckReport {
        ul_grad_x: err(&problem.ul_grad_x(x, y)?, &fd_ux),
        ul_grad_y: err(&problem.ul_grad_y(x, y)?, &fd_uy),
        ll_grad_y: err(&problem.ll_grad_y(x, y)?, &fd_ly),
        jvp: err(&problem.jvp(x, y, v)?, &fd_jv),
        hvp,
    })
}
