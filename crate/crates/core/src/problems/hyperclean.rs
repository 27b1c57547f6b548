//! Data hyper-cleaning: learn per-sample weights on a noisy training set so
//! that a linear softmax classifier trained on the weighted set does well on a
//! clean validation set.
//!
//! ```text
//! F(x, y) = mean_val CE(a, b, y)
//! f(x, y) = Σ_train σ(xᵢ)·CE(aᵢ, bᵢ, y) + c‖y‖²,    σ(t) = clip(t, 0, 1)
//! ```
//!
//! `y` packs the weight matrix `W` (classes × features, row-major) followed by
//! the bias vector `b`; the ridge term covers both. The clip derivative is 1
//! strictly inside `(0, 1)` and 0 elsewhere, boundaries included.

use crate::error::{QnboError, Result};
use crate::linalg::{axpy, check_dim, dot};
use crate::problem::{newton_lower_solve, BilevelProblem};
use crate::problems::dataset::{Dataset, Features, Row};
use crate::scalar::Scalar;

/// Ridge coefficient used in the reference hyper-cleaning experiments.
pub const DEFAULT_RIDGE: f64 = 0.001;

#[derive(Debug, Clone)]
pub struct HyperCleanProblem<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    c: T,
    n_features: usize,
    n_classes: usize,
}

#[inline]
pub fn clip_weight<T: Scalar>(t: T) -> T {
    t.max(T::zero()).min(T::one())
}

#[inline]
pub fn clip_weight_derivative<T: Scalar>(t: T) -> T {
    if t > T::zero() && t < T::one() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn make_hyperclean<T: Scalar>(
    train: Dataset<T>,
    val: Dataset<T>,
    c: T,
) -> Result<HyperCleanProblem<T>> {
    HyperCleanProblem::new(train, val, c)
}

impl<T: Scalar> HyperCleanProblem<T> {
    pub fn new(train: Dataset<T>, val: Dataset<T>, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(QnboError::InvalidArgument(format!(
                "ridge coefficient must be positive, got {c}"
            )));
        }
        if train.is_empty() || val.is_empty() {
            return Err(QnboError::InvalidArgument(
                "hyper-cleaning needs non-empty datasets".into(),
            ));
        }
        if train.labels().iter().chain(val.labels()).any(|&l| l < 0) {
            return Err(QnboError::InvalidArgument(
                "class labels must be non-negative".into(),
            ));
        }
        let n_classes = train.n_classes().max(val.n_classes());
        if n_classes < 2 {
            return Err(QnboError::InvalidArgument(
                "hyper-cleaning needs at least two classes".into(),
            ));
        }
        let n_features = train.n_features().max(val.n_features());
        for ds in [&train, &val] {
            if matches!(ds.features(), Features::Dense { .. }) {
                check_dim(n_features, ds.n_features(), "hyper-cleaning feature count")?;
            }
        }
        Ok(Self {
            train,
            val,
            c,
            n_features,
            n_classes,
        })
    }

    pub fn train(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn val(&self) -> &Dataset<T> {
        &self.val
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn ridge(&self) -> T {
        self.c
    }

    fn weights<'a>(&self, y: &'a [T]) -> (&'a [T], &'a [T]) {
        y.split_at(self.n_classes * self.n_features)
    }

    fn logits(&self, row: Row<'_, T>, y: &[T]) -> Vec<T> {
        let (w, b) = self.weights(y);
        (0..self.n_classes)
            .map(|k| row.dot(&w[k * self.n_features..(k + 1) * self.n_features]) + b[k])
            .collect()
    }

    /// Softmax probabilities and the cross-entropy for `label`.
    fn softmax(&self, row: Row<'_, T>, y: &[T], label: usize) -> (Vec<T>, T) {
        let z = self.logits(row, y);
        let zmax = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut p: Vec<T> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: T = p.iter().copied().sum();
        p.iter_mut().for_each(|v| *v /= total);
        let loss = total.ln() + zmax - z[label];
        (p, loss)
    }

    /// `out += coef · ∂CE/∂y` for one sample, given its softmax output `p`.
    fn accumulate_grad(&self, row: Row<'_, T>, p: &[T], label: usize, coef: T, out: &mut [T]) {
        let f = self.n_features;
        let (w_out, b_out) = out.split_at_mut(self.n_classes * f);
        for k in 0..self.n_classes {
            let r = p[k] - if k == label { T::one() } else { T::zero() };
            let c = coef * r;
            row.axpy(c, &mut w_out[k * f..(k + 1) * f]);
            b_out[k] += c;
        }
    }

    /// `(∂CE/∂y)ᵀ u` for one sample.
    fn grad_dot(&self, row: Row<'_, T>, p: &[T], label: usize, u: &[T]) -> T {
        let dz = self.logits(row, u);
        (0..self.n_classes)
            .map(|k| (p[k] - if k == label { T::one() } else { T::zero() }) * dz[k])
            .sum()
    }

    fn label(ds: &Dataset<T>, i: usize) -> usize {
        ds.labels()[i] as usize
    }

    /// Fraction of `ds` whose arg-max logit matches the label.
    pub fn accuracy(&self, ds: &Dataset<T>, y: &[T]) -> f64 {
        let hits = (0..ds.len())
            .filter(|&i| {
                let z = self.logits(ds.row(i), y);
                let best = z
                    .iter()
                    .enumerate()
                    .fold(
                        (0, T::neg_infinity()),
                        |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
                    );
                best.0 == Self::label(ds, i)
            })
            .count();
        hits as f64 / ds.len() as f64
    }

    fn check_x(&self, x: &[T]) -> Result<()> {
        check_dim(self.train.len(), x.len(), "hyper-cleaning sample weights")
    }
}

impl<T: Scalar> BilevelProblem<T> for HyperCleanProblem<T> {
    fn name(&self) -> &str {
        "hyperclean"
    }
    fn dim_x(&self) -> usize {
        self.train.len()
    }
    fn dim_y(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn ul_value(&self, _x: &[T], y: &[T]) -> Result<T> {
        let total: T = (0..self.val.len())
            .map(|i| {
                self.softmax(self.val.row(i), y, Self::label(&self.val, i))
                    .1
            })
            .sum();
        Ok(total / T::from_usize_lossy(self.val.len()))
    }
    fn ul_grad_x(&self, x: &[T], _y: &[T]) -> Result<Vec<T>> {
        Ok(vec![T::zero(); x.len()])
    }
    fn ul_grad_y(&self, _x: &[T], y: &[T]) -> Result<Vec<T>> {
        let mut g = vec![T::zero(); self.dim_y()];
        let inv = T::one() / T::from_usize_lossy(self.val.len());
        for i in 0..self.val.len() {
            let l = Self::label(&self.val, i);
            let (p, _) = self.softmax(self.val.row(i), y, l);
            self.accumulate_grad(self.val.row(i), &p, l, inv, &mut g);
        }
        Ok(g)
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check_x(x)?;
        let mut total = self.c * dot(y, y);
        for (i, &xi) in x.iter().enumerate() {
            let w = clip_weight(xi);
            if w > T::zero() {
                total += w * self
                    .softmax(self.train.row(i), y, Self::label(&self.train, i))
                    .1;
            }
        }
        Ok(total)
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check_x(x)?;
        let mut g = vec![T::zero(); self.dim_y()];
        for (i, &xi) in x.iter().enumerate() {
            let w = clip_weight(xi);
            if w > T::zero() {
                let l = Self::label(&self.train, i);
                let (p, _) = self.softmax(self.train.row(i), y, l);
                self.accumulate_grad(self.train.row(i), &p, l, w, &mut g);
            }
        }
        axpy(T::lit(2.0) * self.c, y, &mut g);
        Ok(g)
    }

    /// `[∇²ₓᵧf]ᵀu`, entry `i` = `σ'(xᵢ)·(∇ᵧCEᵢ)ᵀu`.
    fn jvp(&self, x: &[T], y: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_x(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let d = clip_weight_derivative(xi);
                if d == T::zero() {
                    return T::zero();
                }
                let l = Self::label(&self.train, i);
                let (p, _) = self.softmax(self.train.row(i), y, l);
                d * self.grad_dot(self.train.row(i), &p, l, u)
            })
            .collect())
    }

    fn hvp(&self, x: &[T], y: &[T], v: &[T]) -> Result<Vec<T>> {
        self.check_x(x)?;
        let f = self.n_features;
        let mut out = vec![T::zero(); self.dim_y()];
        for (i, &xi) in x.iter().enumerate() {
            let w = clip_weight(xi);
            if w == T::zero() {
                continue;
            }
            let row = self.train.row(i);
            let l = Self::label(&self.train, i);
            let (p, _) = self.softmax(row, y, l);
            let dz = self.logits(row, v);
            let pdz = dot(&p, &dz);
            let (w_out, b_out) = out.split_at_mut(self.n_classes * f);
            for k in 0..self.n_classes {
                let t = w * p[k] * (dz[k] - pdz);
                row.axpy(t, &mut w_out[k * f..(k + 1) * f]);
                b_out[k] += t;
            }
        }
        axpy(T::lit(2.0) * self.c, v, &mut out);
        Ok(out)
    }
    fn has_hvp(&self) -> bool {
        true
    }

    fn exact_lower_solve(&self, x: &[T], tol: T) -> Result<Vec<T>> {
        newton_lower_solve(self, x, &vec![T::zero(); self.dim_y()], tol, 200)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use crate::problems::dataset::make_synthetic_classification;

    fn small(c: f64) -> HyperCleanProblem<f64> {
        let ds = make_synthetic_classification::<f64>(40, 3, 3, 0.0, 2).unwrap();
        let (tr, va) = ds.split_at(30);
        make_hyperclean(tr, va, c).unwrap()
    }

    #[test]
    fn all_weights_clipped_to_zero_leaves_only_ridge() {
        let p = small(0.5);
        let x = vec![-0.2; 30];
        let y: Vec<f64> = (0..p.dim_y()).map(|i| i as f64 * 0.1).collect();
        let f = p.ll_value(&x, &y).unwrap();
        assert!((f - 0.5 * dot(&y, &y)).abs() < 1e-12);
        let ystar = p.exact_lower_solve(&x, 1e-12).unwrap();
        assert!(norm(&ystar) < 1e-12);
    }

    #[test]
    fn zero_weights_give_log_classes_per_sample() {
        let p = small(DEFAULT_RIDGE);
        let y = vec![0.0; p.dim_y()];
        let x = vec![1.0; 30];
        let f = p.ll_value(&x, &y).unwrap();
        assert!((f - 30.0 * 3f64.ln()).abs() < 1e-12);
        assert!((p.ul_value(&x, &y).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clip_derivative_is_sticky_at_bounds() {
        assert_eq!(clip_weight_derivative(0.0), 0.0);
        assert_eq!(clip_weight_derivative(1.0), 0.0);
        assert_eq!(clip_weight_derivative(0.5), 1.0);
        assert_eq!(clip_weight_derivative(1.5), 0.0);
        assert_eq!(clip_weight(1.5), 1.0);
        assert_eq!(clip_weight(-1.5), 0.0);
    }

    #[test]
    fn rejects_non_positive_ridge() {
        let ds = make_synthetic_classification::<f64>(10, 2, 2, 0.0, 1).unwrap();
        let (a, b) = ds.split_at(5);
        assert!(make_hyperclean(a.clone(), b.clone(), 0.0).is_err());
        assert!(make_hyperclean(a, b, -1.0).is_err());
    }
}
