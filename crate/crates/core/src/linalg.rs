//! Thin SVD, symmetric eigen-solvers, regularized inverses and inverse
//! square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MnpcaError, Result};

/// Largest condition number accepted for a matrix that gets inverted.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative threshold below which eigenvalues are treated as zero by the
/// pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;

/// How the Gram matrices are inverted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regularization {
    /// `(K + eps |K|_2 I)^{-1}` with `|K|_2` the spectral norm.
    Ridge { eps: f64 },
    /// Moore-Penrose pseudo-inverse.
    PseudoInverse,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Ridge { eps: 0.2 }
    }
}

impl Regularization {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularization::Ridge { eps } if !(eps.is_finite() && eps >= 0.0) => Err(
                MnpcaError::InvalidParameter(format!("eps must be non-negative, got {eps}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Thin SVD `x = U diag(s) V'` with singular values in descending order.
///
/// One-sided Jacobi rotations on the columns of the taller orientation, so the
/// backward error stays at working precision. `U` is `p1 x k` and `V` is
/// `p2 x k` with `k = min(p1, p2)`; a left vector is zero when its singular
/// value is exactly zero.
pub fn thin_svd(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    if x.nrows() < x.ncols() {
        let (s, u, v) = thin_svd(&x.transpose());
        return (s, v, u);
    }
    let n = x.ncols();
    let mut w = x.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u_out = DMatrix::zeros(x.nrows(), n);
    let mut v_out = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            u_out.set_column(dst, &(w.column(src) / norms[src]));
        }
        v_out.set_column(dst, &v.column(src));
    }
    (order.iter().map(|&i| norms[i]).collect(), u_out, v_out)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (a, b) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Eigen-decomposition with eigenvalues sorted in descending order; the
/// columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flips each column so that its largest-magnitude entry is positive; ties go
/// to the lowest index.
pub fn canonicalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn check_symmetric(k: &DMatrix<f64>) -> Result<()> {
    if !k.is_square() {
        return Err(MnpcaError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(MnpcaError::NonFinite("kernel matrix"));
    }
    let scale = k.amax().max(1.0);
    let asym = (k - k.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(MnpcaError::NotSymmetric(asym));
    }
    Ok(())
}

/// Regularized inverse together with its symmetric PSD square root,
/// computed from one eigen-decomposition.
#[derive(Debug, Clone)]
pub struct InverseFactors {
    pub inverse: DMatrix<f64>,
    pub inverse_sqrt: DMatrix<f64>,
}

/// Eigen-decomposes `K + eps |K|_2 I` (or `K` for the pseudo-inverse) and
/// returns `Q L^{-1} Q'` and `Q L^{-1/2} Q'`.
pub fn inverse_factors(k: &DMatrix<f64>, reg: Regularization) -> Result<InverseFactors> {
    check_symmetric(k)?;
    reg.validate()?;
    let n = k.nrows();
    if n == 0 {
        return Err(MnpcaError::Empty("kernel matrix"));
    }
    let (mut vals, vecs) = sym_eigen_desc(k);
    let norm = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let (inv_vals, inv_sqrt_vals): (Vec<f64>, Vec<f64>) = match reg {
        Regularization::Ridge { eps } => {
            let shift = eps * norm;
            vals.iter_mut().for_each(|v| *v += shift);
            let (max, min) = (vals[0], vals[n - 1]);
            if min <= 0.0 || max / min > MAX_CONDITION {
                let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
                return Err(MnpcaError::IllConditioned(cond));
            }
            vals.iter().map(|&v| (1.0 / v, 1.0 / v.sqrt())).unzip()
        }
        Regularization::PseudoInverse => {
            if norm == 0.0 {
                return Err(MnpcaError::IllConditioned(f64::INFINITY));
            }
            let cutoff = PINV_RTOL * norm;
            vals.iter()
                .map(|&v| if v > cutoff { (1.0 / v, 1.0 / v.sqrt()) } else { (0.0, 0.0) })
                .unzip()
        }
    };

    let rebuild = |d: &[f64]| {
        let mut scaled = vecs.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= d[j];
        }
        symmetrize(&(&scaled * vecs.transpose()))
    };
    Ok(InverseFactors { inverse: rebuild(&inv_vals), inverse_sqrt: rebuild(&inv_sqrt_vals) })
}

/// `(K + eps |K|_2 I)^{-1}`.
pub fn regularized_inverse(k: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    Ok(inverse_factors(k, Regularization::Ridge { eps })?.inverse)
}

/// Symmetric PSD square root of `(K + eps |K|_2 I)^{-1}`.
pub fn inverse_sqrt(k: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    Ok(inverse_factors(k, Regularization::Ridge { eps })?.inverse_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn thin_svd_matches_gram_eigenvalues_in_both_orientations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (p1, p2) in [(7, 4), (4, 7), (5, 5)] {
            let x = DMatrix::from_fn(p1, p2, |_, _| rng.random_range(-1.0..1.0));
            let (s, u, v) = thin_svd(&x);
            let k = p1.min(p2);
            assert_eq!((u.shape(), v.shape()), ((p1, k), (p2, k)));
            // squared singular values are the top eigenvalues of X'X
            let gram_vals = SymmetricEigen::new(x.transpose() * &x).eigenvalues;
            let mut expected: Vec<f64> = gram_vals.iter().copied().collect();
            expected.sort_by(|a, b| b.total_cmp(a));
            for j in 0..k {
                assert_relative_eq!(s[j] * s[j], expected[j], epsilon = 1e-12);
            }
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
            let recon = &u * DMatrix::from_diagonal(&DVector::from_vec(s.clone())) * v.transpose();
            assert!((recon - &x).amax() < 1e-14);
            assert!((u.transpose() * &u - DMatrix::identity(k, k)).amax() < 1e-14);
            assert!((v.transpose() * &v - DMatrix::identity(k, k)).amax() < 1e-14);
        }
    }

    #[test]
    fn thin_svd_of_zero_matrix() {
        let (s, u, _) = thin_svd(&DMatrix::zeros(3, 2));
        assert_eq!(s, vec![0.0, 0.0]);
        assert_eq!(u, DMatrix::zeros(3, 2));
    }

    #[test]
    fn diagonal_examples() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let inv = regularized_inverse(&k, 0.2).unwrap();
        assert_relative_eq!(inv[(0, 0)], 1.0 / 4.8, epsilon = 1e-15);
        assert_relative_eq!(inv[(1, 1)], 1.0 / 1.8, epsilon = 1e-15);
        assert_eq!(inv[(0, 1)], 0.0);

        let id = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(regularized_inverse(&id, 0.0).unwrap(), id, epsilon = 1e-15);
        assert_relative_eq!(regularized_inverse(&id, 0.2).unwrap(), &id / 1.2, epsilon = 1e-15);
        assert_relative_eq!(inverse_sqrt(&(&id * 4.0), 0.0).unwrap(), &id * 0.5, epsilon = 1e-15);
        assert_relative_eq!(inverse_sqrt(&id, 0.2).unwrap(), &id / 1.2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn matches_lu_inverse() {
        for seed in 0..5 {
            let k = random_psd(7, seed);
            let direct = k.clone().lu().try_inverse().unwrap();
            assert!(rel_err(&regularized_inverse(&k, 0.0).unwrap(), &direct) < 1e-8);

            let shift = 0.2 * k.clone().symmetric_eigenvalues().amax();
            let shifted = (&k + DMatrix::identity(7, 7) * shift).lu().try_inverse().unwrap();
            assert!(rel_err(&regularized_inverse(&k, 0.2).unwrap(), &shifted) < 1e-8);
        }
    }

    #[test]
    fn square_root_squares_to_inverse() {
        for seed in 10..15 {
            let k = random_psd(6, seed);
            for eps in [0.0, 0.2, 1.0] {
                let f = inverse_factors(&k, Regularization::Ridge { eps }).unwrap();
                assert!(rel_err(&(&f.inverse_sqrt * &f.inverse_sqrt), &f.inverse) < 1e-8);
                let min = f.inverse_sqrt.clone().symmetric_eigenvalues().min();
                assert!(min > 0.0);
            }
        }
    }

    #[test]
    fn ill_conditioned_and_asymmetric_inputs() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(regularized_inverse(&singular, 0.0), Err(MnpcaError::IllConditioned(_))));
        assert!(regularized_inverse(&singular, 0.2).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(regularized_inverse(&asym, 0.2), Err(MnpcaError::NotSymmetric(_))));
        assert!(regularized_inverse(&singular, -1.0).is_err());
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        // v v' with |v| = 1 is its own pseudo-inverse.
        let v = DVector::from_vec(vec![0.6, 0.8]);
        let p = &v * v.transpose();
        let f = inverse_factors(&p, Regularization::PseudoInverse).unwrap();
        assert_relative_eq!(f.inverse, p, epsilon = 1e-12);
        assert_relative_eq!(f.inverse_sqrt, p, epsilon = 1e-12);
    }

    #[test]
    fn eigen_sorted_and_signs_canonical() {
        let k = random_psd(5, 3);
        let (vals, mut vecs) = sym_eigen_desc(&k);
        assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
        canonicalize_column_signs(&mut vecs);
        for col in vecs.column_iter() {
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
        let mut tie = DMatrix::from_row_slice(2, 1, &[-0.5, 0.5]);
        canonicalize_column_signs(&mut tie);
        assert_eq!(tie[(0, 0)], 0.5);
    }
}
