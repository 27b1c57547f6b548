//! Quadratic bilevel benchmark
//!
//! ```text
//! min_x ½‖x − z₀‖² + ½ y*(x)ᵀ A y*(x)   s.t.  y*(x) = argmin_y ½ yᵀAy − xᵀy
//! ```
//!
//! Everything is available in closed form: `y*(x) = A⁻¹x`,
//! `∇Φ(x) = (A⁻¹ + I)x − z₀` and `x* = (A⁻¹ + I)⁻¹z₀`.

use crate::error::{QnboError, Result};
use crate::linalg::{check_dim, dot, sub, Cholesky, DenseMatrix};
use crate::problem::{BilevelProblem, LowerConstants};
use crate::rng;
use crate::scalar::Scalar;

/// Ridge added to `WᵀW/n` in [`make_toy`]; it is the floor of the spectrum.
pub const TOY_RIDGE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct QuadraticToy<T> {
    a: DenseMatrix<T>,
    chol: Cholesky<T>,
    z0: Vec<T>,
    constants: LowerConstants<T>,
    seed: Option<u64>,
}

/// Random toy instance: `A = WᵀW/n + TOY_RIDGE·I` with Gaussian `W`, Gaussian `z₀`.
pub fn make_toy<T: Scalar>(n: usize, seed: u64) -> Result<QuadraticToy<T>> {
    if n == 0 {
        return Err(QnboError::InvalidArgument(
            "toy dimension must be ≥ 1".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let w = DenseMatrix::from_row_major(n, n, rng::gaussian_vec(&mut rng, n * n))?;
    let mut a = w.transpose().matmul(&w);
    let inv_n = T::one() / T::from_usize_lossy(n);
    let ridge = T::lit(TOY_RIDGE);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_n;
        }
        a[(i, i)] += ridge;
    }
    a.symmetrize();
    let z0 = rng::gaussian_vec(&mut rng, n);
    let mut toy = QuadraticToy::new(a, z0)?;
    toy.seed = Some(seed);
    Ok(toy)
}

impl<T: Scalar> QuadraticToy<T> {
    /// Wraps an explicit SPD matrix; fails if `A` is not symmetric to 1e-12
    /// (relative) or not positive definite.
    pub fn new(a: DenseMatrix<T>, z0: Vec<T>) -> Result<Self> {
        check_dim(a.rows(), a.cols(), "toy matrix")?;
        check_dim(a.rows(), z0.len(), "toy z0")?;
        let scale = a.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if a.asymmetry() > T::lit(1e-12) * scale.max(T::one()) {
            return Err(QnboError::InvalidArgument(
                "toy matrix is not symmetric".into(),
            ));
        }
        let chol = a.cholesky()?;
        let eig = a.symmetric_eigenvalues();
        let constants = LowerConstants {
            mu: T::lit(eig[0]),
            l: T::lit(*eig.last().expect("non-empty spectrum")),
        };
        Ok(Self {
            a,
            chol,
            z0,
            constants,
            seed: None,
        })
    }

    /// `A = Q diag(eigenvalues) Qᵀ` with a seeded random orthogonal `Q`.
    pub fn from_spectrum(eigenvalues: &[T], z0: Vec<T>, seed: u64) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 || eigenvalues.iter().any(|&e| !(e > T::zero())) {
            return Err(QnboError::InvalidArgument(
                "spectrum must be non-empty and positive".into(),
            ));
        }
        let mut rng = rng::seeded(seed);
        // Gram-Schmidt on Gaussian columns
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(n);
        while basis.len() < n {
            let mut v = rng::gaussian_vec::<T>(&mut rng, n);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    crate::linalg::axpy(-c, q, &mut v);
                }
            }
            let nv = crate::linalg::norm(&v);
            if nv > T::lit(1e-6) {
                v.iter_mut().for_each(|x| *x /= nv);
                basis.push(v);
            }
        }
        let mut a = DenseMatrix::zeros(n, n);
        for (q, &lam) in basis.iter().zip(eigenvalues) {
            a.rank_one_update(lam, q, q);
        }
        a.symmetrize();
        let mut toy = Self::new(a, z0)?;
        toy.seed = Some(seed);
        Ok(toy)
    }

    pub fn n(&self) -> usize {
        self.z0.len()
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.a
    }

    pub fn z0(&self) -> &[T] {
        &self.z0
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    fn check(&self, x: &[T], y: &[T]) -> Result<()> {
        check_dim(self.n(), x.len(), "toy x")?;
        check_dim(self.n(), y.len(), "toy y")
    }

    /// `A⁻¹v`
    pub fn solve(&self, v: &[T]) -> Vec<T> {
        self.chol.solve(v)
    }

    /// `(A⁻¹ + I)x − z₀`
    pub fn closed_form_hypergradient(&self, x: &[T]) -> Vec<T> {
        let ainv_x = self.solve(x);
        ainv_x
            .iter()
            .zip(x)
            .zip(&self.z0)
            .map(|((&a, &xi), &z)| a + xi - z)
            .collect()
    }

    /// `(x*, y*) = ((A⁻¹ + I)⁻¹z₀, A⁻¹x*)`, via `(A + I)w = z₀`, `x* = Aw`, `y* = w`.
    pub fn closed_form_optimum(&self) -> (Vec<T>, Vec<T>) {
        let n = self.n();
        let mut shifted = self.a.clone();
        for i in 0..n {
            shifted[(i, i)] += T::one();
        }
        let w = shifted
            .cholesky()
            .expect("A + I is SPD whenever A is")
            .solve(&self.z0);
        (self.a.matvec(&w), w)
    }
}

impl<T: Scalar> BilevelProblem<T> for QuadraticToy<T> {
    fn name(&self) -> &str {
        "toy"
    }
    fn dim_x(&self) -> usize {
        self.n()
    }
    fn dim_y(&self) -> usize {
        self.n()
    }

    fn ul_value(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check(x, y)?;
        let dx = sub(x, &self.z0);
        let half = T::lit(0.5);
        Ok(half * dot(&dx, &dx) + half * dot(y, &self.a.matvec(y)))
    }
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check(x, y)?;
        Ok(sub(x, &self.z0))
    }
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check(x, y)?;
        Ok(self.a.matvec(y))
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> Result<T> {
        self.check(x, y)?;
        Ok(T::lit(0.5) * dot(y, &self.a.matvec(y)) - dot(x, y))
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        self.check(x, y)?;
        Ok(sub(&self.a.matvec(y), x))
    }

    fn jvp(&self, x: &[T], y: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check(x, y)?;
        check_dim(self.n(), u.len(), "toy u")?;
        Ok(u.iter().map(|&v| -v).collect())
    }
    fn hvp(&self, x: &[T], y: &[T], v: &[T]) -> Result<Vec<T>> {
        self.check(x, y)?;
        check_dim(self.n(), v.len(), "toy v")?;
        Ok(self.a.matvec(v))
    }
    fn has_hvp(&self) -> bool {
        true
    }

    fn exact_lower_solve(&self, x: &[T], _tol: T) -> Result<Vec<T>> {
        check_dim(self.n(), x.len(), "toy x")?;
        Ok(self.solve(x))
    }
    fn exact_u(&self, x: &[T], y: &[T]) -> Result<Vec<T>> {
        Ok(self.solve(&self.ul_grad_y(x, y)?))
    }
    fn constants(&self) -> Option<LowerConstants<T>> {
        Some(self.constants)
    }
    fn optimum(&self) -> Option<(Vec<T>, Vec<T>)> {
        Some(self.closed_form_optimum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dist, norm};

    #[test]
    fn identity_matrix_optimum_is_half_z0() {
        let z0 = vec![1.0, -2.0, 4.0];
        let toy = QuadraticToy::new(DenseMatrix::identity(3), z0.clone()).unwrap();
        let (xs, ys) = toy.closed_form_optimum();
        let half: Vec<f64> = z0.iter().map(|v| v / 2.0).collect();
        assert!(dist(&xs, &half) < 1e-15);
        assert!(dist(&ys, &half) < 1e-15);
    }

    #[test]
    fn seeded_toy_has_stationary_optimum() {
        for seed in 0..5 {
            let toy = make_toy::<f64>(12, seed).unwrap();
            let (xs, _) = toy.closed_form_optimum();
            assert!(norm(&toy.closed_form_hypergradient(&xs)) < 1e-12);
            let c = toy.constants().unwrap();
            assert!(c.mu >= TOY_RIDGE - 1e-12 && c.l >= c.mu);
        }
    }

    #[test]
    fn oracles_read_off_lower_objective() {
        let toy = make_toy::<f64>(6, 3).unwrap();
        let mut r = rng::seeded(9);
        let x = rng::gaussian_vec::<f64>(&mut r, 6);
        let y = rng::gaussian_vec::<f64>(&mut r, 6);
        let v = rng::gaussian_vec::<f64>(&mut r, 6);
        let x2 = rng::gaussian_vec::<f64>(&mut r, 6);
        assert_eq!(toy.hvp(&x, &y, &v).unwrap(), toy.hvp(&x2, &v, &v).unwrap());
        assert_eq!(toy.hvp(&x, &y, &v).unwrap(), toy.matrix().matvec(&v));
        let neg: Vec<f64> = v.iter().map(|a| -a).collect();
        assert_eq!(toy.jvp(&x, &y, &v).unwrap(), neg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(make_toy::<f64>(0, 1).is_err());
        let asym = DenseMatrix::from_row_major(2, 2, vec![2.0, 1.0, 0.0, 2.0]).unwrap();
        assert!(QuadraticToy::new(asym, vec![0.0; 2]).is_err());
        let indef = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(QuadraticToy::new(indef, vec![0.0; 2]).is_err());
    }

    #[test]
    fn spectrum_constructor_hits_requested_condition_number() {
        let eig = [1.0, 3.0, 10.0, 50.0];
        let toy = QuadraticToy::<f64>::from_spectrum(&eig, vec![0.0; 4], 7).unwrap();
        let c = toy.constants().unwrap();
        assert!((c.mu - 1.0).abs() < 1e-10 && (c.l - 50.0).abs() < 1e-10);
    }
}
