#![allow(dead_code)]

use mnpca::mnpca::LatentMatrix;
use mnpca::MatrixSample;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, p1: usize, p2: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p1, p2, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_sample(rng: &mut impl Rng, n: usize, p1: usize, p2: usize) -> MatrixSample {
    MatrixSample::new((0..n).map(|_| random_matrix(rng, p1, p2)).collect()).unwrap()
}

pub fn random_vector(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    loop {
        let v = random_vector(rng, d, 1.0);
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Largest deviation between two latent sets after choosing, per latent row
/// and per latent column, the sign that best aligns `a` with `b`.
pub fn max_dev_up_to_signs(a: &[LatentMatrix], b: &[LatentMatrix]) -> f64 {
    let (d1, d2) = a[0].shape();
    let mut best = f64::INFINITY;
    // exhaustive over row signs; column signs then follow greedily
    for mask in 0..(1u32 << d1) {
        let row_sign = |k: usize| if mask >> k & 1 == 1 { -1.0 } else { 1.0 };
        let mut col_sign = vec![1.0; d2];
        for (l, s) in col_sign.iter_mut().enumerate() {
            let dot: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (0..d1).map(|k| row_sign(k) * x.0[(k, l)] * y.0[(k, l)]).sum::<f64>())
                .sum();
            if dot < 0.0 {
                *s = -1.0;
            }
        }
        let dev = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| {
                let col_sign = &col_sign;
                (0..d1).flat_map(move |k| {
                    (0..d2).map(move |l| (row_sign(k) * col_sign[l] * x.0[(k, l)] - y.0[(k, l)]).abs())
                })
            })
            .fold(0.0f64, f64::max);
        best = best.min(dev);
    }
    best
}

pub fn max_abs_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).amax()
}
