//! Hyperparameter optimisation of an ℓ2-regularised logistic regression.
//!
//! The upper variable is a single scalar `x` and the ridge weight is `exp(x)`:
//!
//! ```text
//! F(x, y) = Σ_val ℓ(a, b, y)
//! f(x, y) = Σ_train ℓ(a, b, y) + exp(x)/2 ‖y‖²,    ℓ(a, b, y) = log(1 + exp(−b aᵀy))
//! ```
//!
//! Losses are summed, not averaged, so the smoothness constant grows with the
//! training-set size.

use crate::error::{QnboError, Result};
use crate::linalg::{axpy, check_dim, dot};
use crate::problem::{newton_lower_solve, BilevelProblem};
use crate::problems::dataset::{Dataset, Features};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LogRegHpo<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    dim: usize,
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic function `1/(1 + exp(−t))`.
#[inline]
pub(crate) fn logistic<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

pub fn make_logreg<T: Scalar>(train: Dataset<T>, val: Dataset<T>) -> Result<LogRegHpo<T>> {
    LogRegHpo::new(train, val)
}

impl<T: Scalar> LogRegHpo<T> {
    pub fn new(train: Dataset<T>, val: Dataset<T>) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(QnboError::InvalidArgument(
                "logistic regression needs non-empty datasets".into(),
            ));
        }
        for ds in [&train, &val] {
            if ds.labels().iter().any(|&l| l != 1 && l != -1) {
                return Err(QnboError::InvalidArgument(format!(
                    "dataset '{}' has labels outside {{-1, +1}}",
                    ds.name
                )));
            }
        }
        let dim = train.n_features().max(val.n_features());
        for ds in [&train, &val] {
            if matches!(ds.features(), Features::Dense { .. }) {
                check_dim(dim, ds.n_features(), "logistic regression feature count")?;
            }
        }
        Ok(Self { train, val, dim })
    }

    pub fn train(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn val(&self) -> &Dataset<T> {
        &self.val
    }

    fn loss(ds: &Dataset<T>, y: &[T]) -> T {
        (0..ds.len())
            .map(|i| {
                let b = T::lit(ds.labels()[i] as f64);
                softplus(-b * ds.row(i).dot(y))
            })
            .sum()
    }

    fn loss_grad(ds: &Dataset<T>, y: &[T], out: &mut [T]) {
        for i in 0..ds.len() {
            let b = T::lit(ds.labels()[i] as f64);
            let m = b * ds.row(i).dot(y);
            ds.row(i).axpy(-b * logistic(-m), out);
        }
    }

    /// Fraction of `ds` classified correctly by `sign(aᵀy)`.
    pub fn accuracy(ds: &Dataset<T>, y: &[T]) -> f64 {
        let hits = (0..ds.len())
            .filter(|&i| {
                let s = ds.row(i).dot(y);
                (s >= T::zero()) == (ds.labels()[i] > 0)
            })
            .count();
        hits as f64 / ds.len().max(1) as f64
    }
}

impl<T: Scalar> BilevelProblem<T> for LogRegHpo<T> {
    fn name(&self) -> &str {
        "logreg"
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        self.dim
    }

    fn ul_value(&self, _x: &[T], y: &[T]) -> Result<T> {
        Ok(Self::loss(&self.val, y))
    }
    fn ul_grad_x(&self, _x: &[T], _y: &[T]) -> Result<Vec<T>> {
        Ok(vec![T::zero()])
    }
    fn ul_grad_y(&self, _x: &[T], y: &[T]) -> Result<Vec<T>> {
        let mut g = vec![T::zero(); self.dim];
        Self::loss_grad(&self.val, y, &mut g);
        Ok(g)
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> Result<T> {
        check_dim(1, x.len(), "logreg hyperparameter")?;
        Ok(Self::loss(&self.train, y) + T::lit(0.5) * x[0].exp() * dot(y, y))
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        check_dim(1, x.len(), "logreg hyperparameter")?;
        let mut g = vec![T::zero(); self.dim];
        Self::loss_grad(&self.train, y, &mut g);
        axpy(x[0].exp(), y, &mut g);
        Ok(g)
    }

    /// `∂ₓ∇ᵧf = exp(x)·y`, so the contraction is the scalar `exp(x)·yᵀu`.
    fn jvp(&self, x: &[T], y: &[T], u: &[T]) -> Result<Vec<T>> {
        check_dim(1, x.len(), "logreg hyperparameter")?;
        Ok(vec![x[0].exp() * dot(y, u)])
    }
    fn hvp(&self, x: &[T], y: &[T], v: &[T]) -> Result<Vec<T>> {
        check_dim(1, x.len(), "logreg hyperparameter")?;
        let mut out = vec![T::zero(); self.dim];
        for i in 0..self.train.len() {
            let row = self.train.row(i);
            let s = logistic(row.dot(y));
            row.axpy(s * (T::one() - s) * row.dot(v), &mut out);
        }
        axpy(x[0].exp(), v, &mut out);
        Ok(out)
    }
    fn has_hvp(&self) -> bool {
        true
    }

    fn exact_lower_solve(&self, x: &[T], tol: T) -> Result<Vec<T>> {
        newton_lower_solve(self, x, &vec![T::zero(); self.dim], tol, 200)
    }
}
