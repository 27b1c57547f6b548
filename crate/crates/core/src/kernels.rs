//! Matrix-free quasi-Newton recursions over a history of curvature pairs.
//!
//! Both kernels compute `r = H_t d`, where `H_t` is the inverse-Hessian
//! approximation obtained by applying the BFGS or SR1 update to `h0·I` once per
//! stored pair, oldest first. Neither ever forms `H_t`: the BFGS kernel is the
//! classical two-loop recursion and the SR1 kernel expands `H_t` as `h0·I` plus
//! a sum of rank-one terms. The dense reference updates live in [`oracle`].

use std::collections::VecDeque;

use crate::error::{QnboError, Result};
use crate::linalg::{axpy, check_dim, dot, norm};
use crate::scalar::Scalar;

/// Relative curvature threshold: a BFGS pair is kept iff `sᵀg > EPS_CURV·‖s‖‖g‖`.
pub const EPS_CURV: f64 = 1e-12;

/// Relative SR1 denominator threshold: pair `i` is skipped iff
/// `|pᵢᵀgᵢ| ≤ SR1_SKIP·‖pᵢ‖‖gᵢ‖`.
pub const SR1_SKIP: f64 = 1e-8;

/// Which quasi-Newton update the recursions emulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QnMode {
    #[default]
    Bfgs,
    Sr1,
}

impl std::fmt::Display for QnMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QnMode::Bfgs => "bfgs",
            QnMode::Sr1 => "sr1",
        })
    }
}

/// Iterate difference `s` and gradient difference `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair<T> {
    pub s: Vec<T>,
    pub g: Vec<T>,
}

impl<T: Scalar> CurvaturePair<T> {
    pub fn new(s: Vec<T>, g: Vec<T>) -> Result<Self> {
        check_dim(s.len(), g.len(), "curvature pair")?;
        Ok(Self { s, g })
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// `sᵀg`
    pub fn curvature(&self) -> T {
        dot(&self.s, &self.g)
    }

    fn passes_safeguard(&self, mode: QnMode) -> bool {
        let finite = self.s.iter().chain(&self.g).all(|v| v.is_finite());
        finite
            && match mode {
                QnMode::Bfgs => self.satisfies_curvature(),
                QnMode::Sr1 => norm(&self.s) > T::zero() && norm(&self.g) > T::zero(),
            }
    }

    fn satisfies_curvature(&self) -> bool {
        let sg = self.curvature();
        sg > T::lit(EPS_CURV) * norm(&self.s) * norm(&self.g)
    }
}

/// `H₀ = h0·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScale<T>(T);

impl<T: Scalar> InitScale<T> {
    pub fn new(h0: T) -> Result<Self> {
        if h0 > T::zero() && h0.is_finite() {
            Ok(Self(h0))
        } else {
            Err(QnboError::InvalidArgument(format!(
                "initial scale must be positive and finite, got {h0}"
            )))
        }
    }

    pub fn identity() -> Self {
        Self(T::one())
    }

    #[inline]
    pub fn get(self) -> T {
        self.0
    }
}

/// Ordered (oldest first) curvature pairs sharing one dimension.
///
/// With a capacity set, pushing beyond it evicts the oldest pair, which turns
/// the recursions into their limited-memory variants.
#[derive(Debug, Clone, PartialEq)]
pub struct PairHistory<T> {
    dim: usize,
    capacity: Option<usize>,
    pairs: VecDeque<CurvaturePair<T>>,
    rejected: usize,
}

impl<T: Scalar> PairHistory<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            capacity: None,
            pairs: VecDeque::new(),
            rejected: 0,
        }
    }

    pub fn with_capacity_limit(dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(QnboError::InvalidArgument(
                "pair history capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            capacity: Some(capacity),
            ..Self::new(dim)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs turned away by the safeguard gate so far.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn pairs(&self) -> impl ExactSizeIterator<Item = &CurvaturePair<T>> + DoubleEndedIterator {
        self.pairs.iter()
    }

    pub fn last(&self) -> Option<&CurvaturePair<T>> {
        self.pairs.back()
    }

    /// Appends `pair` if it passes the safeguard for `mode`.
    ///
    /// BFGS keeps a pair only when `sᵀg > EPS_CURV·‖s‖‖g‖`. SR1 keeps every
    /// finite pair with non-zero `s` and `g`; its denominator test happens at
    /// apply time because it depends on the pairs before it.
    pub fn push_pair(&mut self, pair: CurvaturePair<T>, mode: QnMode) -> Result<bool> {
        check_dim(self.dim, pair.dim(), "pair history")?;
        if !pair.passes_safeguard(mode) {
            self.rejected += 1;
            return Ok(false);
        }
        if let Some(cap) = self.capacity {
            while self.pairs.len() >= cap {
                self.pairs.pop_front();
            }
        }
        self.pairs.push_back(pair);
        Ok(true)
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }
}

/// `H_t d` under the BFGS update (two-loop recursion).
pub fn bfgs_two_loop<T: Scalar>(
    d: &[T],
    h0: InitScale<T>,
    hist: &PairHistory<T>,
) -> Result<Vec<T>> {
    check_dim(hist.dim(), d.len(), "two-loop direction")?;
    let m = hist.len();
    let mut rho = Vec::with_capacity(m);
    for (index, p) in hist.pairs().enumerate() {
        if !p.satisfies_curvature() {
            return Err(QnboError::RejectedPair {
                index,
                curvature: p.curvature().to_f64_lossy(),
            });
        }
        rho.push(T::one() / p.curvature());
    }

    let mut q = d.to_vec();
    let mut alpha = vec![T::zero(); m];
    for (i, p) in hist.pairs().enumerate().rev() {
        alpha[i] = rho[i] * dot(&p.s, &q);
        axpy(-alpha[i], &p.g, &mut q);
    }
    let mut r = q;
    r.iter_mut().for_each(|v| *v *= h0.get());
    for (i, p) in hist.pairs().enumerate() {
        let beta = rho[i] * dot(&p.g, &r);
        axpy(alpha[i] - beta, &p.s, &mut r);
    }
    Ok(r)
}

/// The SR1 correction vectors `pᵢ` and denominators `pᵢᵀgᵢ` of every pair that
/// survives the skip rule, in history order.
fn sr1_terms<T: Scalar>(h0: InitScale<T>, hist: &PairHistory<T>) -> Vec<(Vec<T>, T)> {
    let mut kept: Vec<(Vec<T>, T)> = Vec::with_capacity(hist.len());
    for pair in hist.pairs() {
        if let Some(term) = sr1_term(h0, &kept, pair) {
            kept.push(term);
        }
    }
    kept
}

/// `H_t d` under the SR1 update.
pub fn sr1_apply<T: Scalar>(d: &[T], h0: InitScale<T>, hist: &PairHistory<T>) -> Result<Vec<T>> {
    check_dim(hist.dim(), d.len(), "sr1 direction")?;
    let mut r: Vec<T> = d.iter().map(|&v| h0.get() * v).collect();
    for (p, den) in sr1_terms(h0, hist) {
        axpy(dot(&p, d) / den, &p, &mut r);
    }
    Ok(r)
}

/// Dispatches to the recursion for `mode`.
pub fn apply_inverse<T: Scalar>(
    mode: QnMode,
    d: &[T],
    h0: InitScale<T>,
    hist: &PairHistory<T>,
) -> Result<Vec<T>> {
    match mode {
        QnMode::Bfgs => bfgs_two_loop(d, h0, hist),
        QnMode::Sr1 => sr1_apply(d, h0, hist),
    }
}

/// An inverse-Hessian approximation grown one pair at a time.
///
/// Applies agree with [`apply_inverse`] on the same accepted pairs. SR1
/// correction terms are cached so each push costs `O(m·n)` instead of
/// rebuilding them on every apply. With `dense_after = Some(m)`, the operator
/// switches to an explicit `n × n` matrix once `m` pairs are held, after which
/// pushes and applies cost `O(n²)` regardless of how many pairs arrive.
#[derive(Debug, Clone)]
pub struct InverseOperator<T> {
    mode: QnMode,
    h0: InitScale<T>,
    hist: PairHistory<T>,
    sr1: Vec<(Vec<T>, T)>,
    dense: Option<crate::linalg::DenseMatrix<T>>,
    dense_after: Option<usize>,
    accepted: usize,
}

impl<T: Scalar> InverseOperator<T> {
    pub fn new(mode: QnMode, h0: InitScale<T>, dim: usize, dense_after: Option<usize>) -> Self {
        Self {
            mode,
            h0,
            hist: PairHistory::new(dim),
            sr1: Vec::new(),
            dense: None,
            dense_after,
            accepted: 0,
        }
    }

    /// Pairs accepted so far.
    pub fn len(&self) -> usize {
        self.accepted
    }

    pub fn is_empty(&self) -> bool {
        self.accepted == 0
    }

    pub fn rejected(&self) -> usize {
        self.hist.rejected()
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn push(&mut self, pair: CurvaturePair<T>) -> Result<bool> {
        if let Some(h) = self.dense.as_mut() {
            check_dim(self.hist.dim(), pair.dim(), "inverse operator")?;
            if !pair.passes_safeguard(self.mode) {
                self.hist.rejected += 1;
                return Ok(false);
            }
            dense_update(h, &pair, self.mode);
            self.accepted += 1;
            return Ok(true);
        }
        let sr1_term = match self.mode {
            QnMode::Sr1 => Some(sr1_term(self.h0, &self.sr1, &pair)),
            QnMode::Bfgs => None,
        };
        if !self.hist.push_pair(pair, self.mode)? {
            return Ok(false);
        }
        self.accepted += 1;
        if let Some(Some(term)) = sr1_term {
            self.sr1.push(term);
        }
        if self.dense_after.is_some_and(|m| self.accepted >= m) {
            let mut h = crate::linalg::DenseMatrix::scaled_identity(self.hist.dim(), self.h0.get());
            for p in self.hist.pairs() {
                dense_update(&mut h, p, self.mode);
            }
            self.dense = Some(h);
            self.hist.clear();
            self.sr1.clear();
        }
        Ok(true)
    }

    /// `H d` for the pairs pushed so far.
    pub fn apply(&self, d: &[T]) -> Result<Vec<T>> {
        check_dim(self.hist.dim(), d.len(), "inverse operator direction")?;
        if let Some(h) = &self.dense {
            return Ok(h.matvec(d));
        }
        match self.mode {
            QnMode::Bfgs => bfgs_two_loop(d, self.h0, &self.hist),
            QnMode::Sr1 => {
                let mut r: Vec<T> = d.iter().map(|&v| self.h0.get() * v).collect();
                for (p, den) in &self.sr1 {
                    axpy(dot(p, d) / *den, p, &mut r);
                }
                Ok(r)
            }
        }
    }
}

fn sr1_term<T: Scalar>(
    h0: InitScale<T>,
    kept: &[(Vec<T>, T)],
    pair: &CurvaturePair<T>,
) -> Option<(Vec<T>, T)> {
    let mut p: Vec<T> = pair
        .s
        .iter()
        .zip(&pair.g)
        .map(|(&s, &g)| s - h0.get() * g)
        .collect();
    for (pj, den) in kept {
        let c = dot(pj, &pair.g) / *den;
        axpy(-c, pj, &mut p);
    }
    let den = dot(&p, &pair.g);
    (den.abs() > T::lit(SR1_SKIP) * norm(&p) * norm(&pair.g)).then_some((p, den))
}

fn dense_update<T: Scalar>(
    h: &mut crate::linalg::DenseMatrix<T>,
    pair: &CurvaturePair<T>,
    mode: QnMode,
) {
    let hg = h.matvec(&pair.g);
    match mode {
        QnMode::Bfgs => {
            // H⁺ = H − ρ(s(Hg)ᵀ + (Hg)sᵀ) + (ρ + ρ²gᵀHg) ssᵀ
            let rho = T::one() / pair.curvature();
            let ghg = dot(&pair.g, &hg);
            h.rank_one_update(-rho, &pair.s, &hg);
            h.rank_one_update(-rho, &hg, &pair.s);
            h.rank_one_update(rho + rho * rho * ghg, &pair.s, &pair.s);
        }
        QnMode::Sr1 => {
            let w: Vec<T> = pair.s.iter().zip(&hg).map(|(&s, &v)| s - v).collect();
            let den = dot(&w, &pair.g);
            if den.abs() > T::lit(SR1_SKIP) * norm(&w) * norm(&pair.g) {
                h.rank_one_update(T::one() / den, &w, &w);
            }
        }
    }
}

/// Explicit dense inverse-Hessian updates, for checking the recursions on
/// small problems.
pub mod oracle {
    use super::*;
    use crate::linalg::DenseMatrix;

    /// `H_t` from the BFGS product form
    /// `H⁺ = (I − ρ s gᵀ) H (I − ρ g sᵀ) + ρ s sᵀ`, `ρ = 1/(gᵀs)`.
    pub fn dense_bfgs_oracle<T: Scalar>(
        h0: InitScale<T>,
        hist: &PairHistory<T>,
    ) -> Result<DenseMatrix<T>> {
        let n = hist.dim();
        let mut h = DenseMatrix::scaled_identity(n, h0.get());
        for (index, p) in hist.pairs().enumerate() {
            if !p.satisfies_curvature() {
                return Err(QnboError::RejectedPair {
                    index,
                    curvature: p.curvature().to_f64_lossy(),
                });
            }
            let rho = T::one() / p.curvature();
            let mut v = DenseMatrix::identity(n);
            v.rank_one_update(-rho, &p.g, &p.s);
            let mut next = v.transpose().matmul(&h).matmul(&v);
            next.rank_one_update(rho, &p.s, &p.s);
            h = next;
        }
        Ok(h)
    }

    /// `H_t` from `H⁺ = H + (s − Hg)(s − Hg)ᵀ / ((s − Hg)ᵀg)`, skipping an
    /// update whose denominator fails the same relative test as [`sr1_apply`].
    pub fn dense_sr1_oracle<T: Scalar>(
        h0: InitScale<T>,
        hist: &PairHistory<T>,
    ) -> Result<DenseMatrix<T>> {
        let n = hist.dim();
        let mut h = DenseMatrix::scaled_identity(n, h0.get());
        for p in hist.pairs() {
            let hg = h.matvec(&p.g);
            let w: Vec<T> = p.s.iter().zip(&hg).map(|(&s, &v)| s - v).collect();
            let den = dot(&w, &p.g);
            if den.abs() > T::lit(SR1_SKIP) * norm(&w) * norm(&p.g) {
                h.rank_one_update(T::one() / den, &w, &w);
            }
        }
        Ok(h)
    }
}
