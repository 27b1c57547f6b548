//! Seeded randomness. Every generator in the crate goes through here so that a
//! seed pins down a run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<T: Scalar>(rng: &mut Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}

pub fn gaussian_vec<T: Scalar>(rng: &mut Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| gaussian(rng)).collect()
}

pub fn unit_vec<T: Scalar>(rng: &mut Rng, n: usize) -> Vec<T> {
    let mut v = gaussian_vec::<T>(rng, n);
    let nv = crate::linalg::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}
