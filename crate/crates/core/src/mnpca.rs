//! Fitting and applying the non-linear two-sided PCA.
//!
//! With `K1s`, `K2s` the (regularized) inverse square roots of the Gram
//! matrices, the two operator matrices are
//!
//! ```text
//! P1 = K1s [ 1/n sum_i (F_i - F_bar) K2s^2 (F_i - F_bar)' ] K1s
//! P2 = K2s [ 1/n sum_i (F_i - F_bar)' K1s^2 (F_i - F_bar) ] K2s
//! ```
//!
//! and the latent matrix of an observation is
//! `Z = A' K1s (F - F_bar) K2s B` with `A`, `B` the leading eigenvectors of
//! `P1`, `P2`.
//!
//! The sums are never formed one observation at a time. Stacking the factors
//! of all `F_i = L_i S_i R_i'` into `L = [L_1 .. L_n]`, `R = [R_1 .. R_n]`,
//!
//! ```text
//! sum_i (F_i - F_bar) W (F_i - F_bar)' = L [ (S R'WR S) o (C (x) 11') ] L'
//! ```
//!
//! where `o` is the Hadamard product and `C = I - 11'/n` the centering
//! matrix. Both Hadamard factors are PSD, so the result is PSD by
//! construction, and the cost is `O(n^3 r^2)` per side rather than `O(n^4)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MnpcaError, Result};
use crate::exec::Execution;
use crate::kernels::KernelSpec;
use crate::linalg::{canonicalize_column_signs, sym_eigen_desc, symmetrize};
use crate::svd_features::{
    build_feature_set, check_kernel_pair, feature_factor, truncated_svd, FeatureConfig, FeatureFactor,
    FeatureSet, MatrixSample, TruncatedSvd,
};

/// Eigenvalues within this fraction of the uncentered operator trace are
/// round-off and are reported as zero.
pub const EIGEN_NOISE_RTOL: f64 = 1e-12;

/// A `d1 x d2` matrix of two-sided principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix(pub DMatrix<f64>);

impl LatentMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_vec(self.to_row_major())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub features: FeatureConfig,
    /// `(d1, d2)`; `None` selects both with [`scree_select`].
    pub dims: Option<(usize, usize)>,
    pub execution: Execution,
}

/// Fitted model; holds everything `transform` needs and nothing from the
/// training matrices themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct MnpcaModel {
    pub(crate) k1: KernelSpec,
    pub(crate) k2: KernelSpec,
    pub(crate) config: FeatureConfig,
    pub(crate) n: usize,
    pub(crate) shape: (usize, usize),
    pub(crate) left_basis: Vec<DVector<f64>>,
    pub(crate) right_basis: Vec<DVector<f64>>,
    pub(crate) k1_dag_sqrt: DMatrix<f64>,
    pub(crate) k2_dag_sqrt: DMatrix<f64>,
    pub(crate) f_bar: DMatrix<f64>,
    pub(crate) eigvals1: DVector<f64>,
    pub(crate) eigvals2: DVector<f64>,
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
    // derived: K1s A, K2s B and the latent of F_bar
    left_proj: DMatrix<f64>,
    right_proj: DMatrix<f64>,
    center: DMatrix<f64>,
}

/// The two operator matrices of a feature set, with the trace of their
/// uncentered counterpart (a scale for round-off decisions).
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub scale: f64,
}

pub fn operator_matrices(fs: &FeatureSet) -> OperatorMatrices {
    let n = fs.len();
    let r = fs.config().r;
    let mn = fs.basis_len();
    let nr = n * r;

    let mut l_stack = DMatrix::zeros(mn, nr);
    let mut r_stack = DMatrix::zeros(mn, nr);
    let mut sigma = DVector::zeros(nr);
    for (i, f) in fs.factors().iter().enumerate() {
        l_stack.view_mut((0, i * r), (mn, r)).copy_from(&f.left);
        r_stack.view_mut((0, i * r), (mn, r)).copy_from(&f.right);
        sigma.rows_mut(i * r, r).copy_from(&f.sigma);
    }
    let y1 = fs.k1_dag_sqrt() * l_stack;
    let y2 = fs.k2_dag_sqrt() * r_stack;
    let q1 = y1.transpose() * &y1;
    let q2 = y2.transpose() * &y2;

    let inv_n = 1.0 / n as f64;
    let mut scale = 0.0;
    let centered_core = |q: &DMatrix<f64>| {
        DMatrix::from_fn(nr, nr, |p, s| {
            let c = if p / r == s / r { 1.0 - inv_n } else { -inv_n };
            sigma[p] * q[(p, s)] * sigma[s] * c
        })
    };
    for p in 0..nr {
        let block = p / r;
        for s in block * r..(block + 1) * r {
            scale += sigma[p] * q2[(p, s)] * sigma[s] * q1[(s, p)];
        }
    }
    scale *= inv_n;

    let p1 = symmetrize(&(&y1 * centered_core(&q2) * y1.transpose() * inv_n));
    let p2 = symmetrize(&(&y2 * centered_core(&q1) * y2.transpose() * inv_n));
    OperatorMatrices { p1, p2, scale }
}

/// Number of eigenvalues strictly above `mean + 2 sd` (sample sd), at least 1.
pub fn scree_select(eigenvalues: &[f64]) -> usize {
    let n = eigenvalues.len();
    if n < 2 {
        return 1;
    }
    let mean = eigenvalues.iter().sum::<f64>() / n as f64;
    let var = eigenvalues.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let threshold = mean + 2.0 * var.sqrt();
    eigenvalues.iter().filter(|&&v| v > threshold).count().max(1)
}

fn snap_noise(vals: &mut DVector<f64>, scale: f64) {
    let floor = EIGEN_NOISE_RTOL * scale.abs();
    for v in vals.iter_mut() {
        if v.abs() <= floor {
            *v = 0.0;
        }
    }
}

/// Builds the feature set of `sample` and fits the model.
pub fn fit(sample: &MatrixSample, k1: KernelSpec, k2: KernelSpec, opts: &FitOptions) -> Result<MnpcaModel> {
    let fs = build_feature_set(sample, k1, k2, opts.features, opts.execution)?;
    fit_features(&fs, opts.dims)
}

/// Fits the model and returns the in-sample latent matrices as well.
pub fn fit_transform(
    sample: &MatrixSample,
    k1: KernelSpec,
    k2: KernelSpec,
    opts: &FitOptions,
) -> Result<(MnpcaModel, Vec<LatentMatrix>)> {
    let fs = build_feature_set(sample, k1, k2, opts.features, opts.execution)?;
    let model = fit_features(&fs, opts.dims)?;
    let latents = model.latents(&fs);
    Ok((model, latents))
}

/// Fits the model on a prepared feature set.
pub fn fit_features(fs: &FeatureSet, dims: Option<(usize, usize)>) -> Result<MnpcaModel> {
    let mn = fs.basis_len();
    if let Some((d1, d2)) = dims {
        if d1 == 0 || d2 == 0 || d1 > mn || d2 > mn {
            return Err(MnpcaError::InvalidParameter(format!(
                "latent dimensions ({d1}, {d2}) must lie in 1..={mn}"
            )));
        }
    }
    let ops = operator_matrices(fs);
    let (mut eigvals1, vecs1) = sym_eigen_desc(&ops.p1);
    let (mut eigvals2, vecs2) = sym_eigen_desc(&ops.p2);
    snap_noise(&mut eigvals1, ops.scale);
    snap_noise(&mut eigvals2, ops.scale);

    let (d1, d2) = dims.unwrap_or_else(|| (scree_select(eigvals1.as_slice()), scree_select(eigvals2.as_slice())));
    let mut a = vecs1.columns(0, d1).into_owned();
    let mut b = vecs2.columns(0, d2).into_owned();
    canonicalize_column_signs(&mut a);
    canonicalize_column_signs(&mut b);

    let (k1, k2) = fs.kernels();
    MnpcaModel::from_parts(ModelParts {
        k1,
        k2,
        config: *fs.config(),
        n: fs.len(),
        shape: fs.shape(),
        left_basis: fs.left_basis().to_vec(),
        right_basis: fs.right_basis().to_vec(),
        k1_dag_sqrt: fs.k1_dag_sqrt().clone(),
        k2_dag_sqrt: fs.k2_dag_sqrt().clone(),
        f_bar: fs.f_bar().clone(),
        eigvals1,
        eigvals2,
        a,
        b,
    })
}

/// Raw fields of a model, as stored on disk.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub k1: KernelSpec,
    pub k2: KernelSpec,
    pub config: FeatureConfig,
    pub n: usize,
    pub shape: (usize, usize),
    pub left_basis: Vec<DVector<f64>>,
    pub right_basis: Vec<DVector<f64>>,
    pub k1_dag_sqrt: DMatrix<f64>,
    pub k2_dag_sqrt: DMatrix<f64>,
    pub f_bar: DMatrix<f64>,
    pub eigvals1: DVector<f64>,
    pub eigvals2: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Which side of the model an eigenvalue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenRow {
    pub side: Side,
    /// 1-based.
    pub index: usize,
    pub eigenvalue: f64,
}

impl MnpcaModel {
    pub fn from_parts(p: ModelParts) -> Result<Self> {
        check_kernel_pair(&p.k1, &p.k2)?;
        let mn = p.left_basis.len();
        let square = |m: &DMatrix<f64>| m.shape() == (mn, mn);
        if p.right_basis.len() != mn
            || !square(&p.k1_dag_sqrt)
            || !square(&p.k2_dag_sqrt)
            || !square(&p.f_bar)
            || p.eigvals1.len() != mn
            || p.eigvals2.len() != mn
            || p.a.nrows() != mn
            || p.b.nrows() != mn
            || p.a.ncols() == 0
            || p.b.ncols() == 0
        {
            return Err(MnpcaError::DimensionMismatch(format!("inconsistent model parts for basis size {mn}")));
        }
        if p.left_basis.iter().any(|u| u.len() != p.shape.0) || p.right_basis.iter().any(|v| v.len() != p.shape.1) {
            return Err(MnpcaError::DimensionMismatch("basis vector length does not match observation shape".into()));
        }
        let left_proj = &p.k1_dag_sqrt * &p.a;
        let right_proj = &p.k2_dag_sqrt * &p.b;
        let center = left_proj.transpose() * &p.f_bar * &right_proj;
        Ok(Self {
            k1: p.k1,
            k2: p.k2,
            config: p.config,
            n: p.n,
            shape: p.shape,
            left_basis: p.left_basis,
            right_basis: p.right_basis,
            k1_dag_sqrt: p.k1_dag_sqrt,
            k2_dag_sqrt: p.k2_dag_sqrt,
            f_bar: p.f_bar,
            eigvals1: p.eigvals1,
            eigvals2: p.eigvals2,
            a: p.a,
            b: p.b,
            left_proj,
            right_proj,
            center,
        })
    }

    pub fn into_parts(self) -> ModelParts {
        ModelParts {
            k1: self.k1,
            k2: self.k2,
            config: self.config,
            n: self.n,
            shape: self.shape,
            left_basis: self.left_basis,
            right_basis: self.right_basis,
            k1_dag_sqrt: self.k1_dag_sqrt,
            k2_dag_sqrt: self.k2_dag_sqrt,
            f_bar: self.f_bar,
            eigvals1: self.eigvals1,
            eigvals2: self.eigvals2,
            a: self.a,
            b: self.b,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.b.ncols())
    }

    pub fn kernels(&self) -> (KernelSpec, KernelSpec) {
        (self.k1, self.k2)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn basis_len(&self) -> usize {
        self.left_basis.len()
    }

    pub fn eigvals1(&self) -> &DVector<f64> {
        &self.eigvals1
    }

    pub fn eigvals2(&self) -> &DVector<f64> {
        &self.eigvals2
    }

    /// Left eigenvectors, `mn x d1`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Right eigenvectors, `mn x d2`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// All eigenvalues of both sides, descending within a side.
    pub fn eigen_report(&self) -> Vec<EigenRow> {
        let rows = |side, vals: &DVector<f64>| {
            vals.iter()
                .enumerate()
                .map(move |(i, &eigenvalue)| EigenRow { side, index: i + 1, eigenvalue })
                .collect::<Vec<_>>()
        };
        let mut out = rows(Side::Left, &self.eigvals1);
        out.extend(rows(Side::Right, &self.eigvals2));
        out
    }

    fn latent_of_factor(&self, f: &FeatureFactor) -> LatentMatrix {
        let mut left = self.left_proj.transpose() * &f.left;
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col *= f.sigma[j];
        }
        LatentMatrix(left * (f.right.transpose() * &self.right_proj) - &self.center)
    }

    /// In-sample latents of the feature set the model was fitted on.
    pub fn latents(&self, fs: &FeatureSet) -> Vec<LatentMatrix> {
        fs.factors().iter().map(|f| self.latent_of_factor(f)).collect()
    }

    /// Latent matrix of an observation given its truncated SVD.
    pub fn transform_svd(&self, svd: &TruncatedSvd) -> Result<LatentMatrix> {
        if svd.rank() != self.config.r
            || (svd.left_vectors().nrows(), svd.right_vectors().nrows()) != self.shape
        {
            return Err(MnpcaError::DimensionMismatch(format!(
                "svd of rank {} on {}x{} does not match the model (rank {}, {}x{})",
                svd.rank(),
                svd.left_vectors().nrows(),
                svd.right_vectors().nrows(),
                self.config.r,
                self.shape.0,
                self.shape.1
            )));
        }
        let f = feature_factor(svd, &self.k1, &self.k2, &self.left_basis, &self.right_basis);
        Ok(self.latent_of_factor(&f))
    }

    /// Latent matrix of a (possibly new) observation.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        if x.shape() != self.shape {
            return Err(MnpcaError::DimensionMismatch(format!(
                "observation is {}x{}, model expects {}x{}",
                x.nrows(),
                x.ncols(),
                self.shape.0,
                self.shape.1
            )));
        }
        let svd = truncated_svd(x, self.config.r, self.config.tie_tol)?;
        self.transform_svd(&svd)
    }

    pub fn transform_sample(&self, sample: &MatrixSample, exec: Execution) -> Result<Vec<LatentMatrix>> {
        crate::exec::try_map_indexed(exec, sample.len(), |i| self.transform(sample.get(i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Parity;
    use crate::linalg::Regularization;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(seed: u64, n: usize, p1: usize, p2: usize) -> MatrixSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MatrixSample::new((0..n).map(|_| DMatrix::from_fn(p1, p2, |_, _| rng.random_range(-1.0..1.0))).collect())
            .unwrap()
    }

    fn odd(sigma2: f64) -> KernelSpec {
        KernelSpec::gaussian(sigma2, Parity::Odd).unwrap()
    }

    #[test]
    fn scree_examples() {
        assert_eq!(scree_select(&[2.0; 7]), 1);
        let mut v = vec![10.0, 9.0];
        v.extend(std::iter::repeat_n(0.1, 50));
        // oracle: mean = 24/52, sd^2 = sum (x - mean)^2 / 51
        let mean = 24.0 / 52.0;
        let var = ((10.0f64 - mean).powi(2) + (9.0f64 - mean).powi(2) + 50.0 * (0.1f64 - mean).powi(2)) / 51.0;
        let threshold = mean + 2.0 * var.sqrt();
        assert!((threshold - 4.12).abs() < 0.01);
        assert_eq!(scree_select(&v), 2);
        assert_eq!(scree_select(&[10.0, 1.0, 1.0, 1.0, 1.0]), 1);
        assert_eq!(scree_select(&[3.0]), 1);
    }

    #[test]
    fn operator_matches_direct_sum() {
        // Oracle: form P1, P2 from dense F_i with the uncentered formula.
        let sample = random_sample(3, 7, 5, 4);
        let cfg = FeatureConfig { r: 3, m: 2, ..Default::default() };
        let fs = build_feature_set(&sample, odd(0.7), odd(1.1), cfg, Execution::Sequential).unwrap();
        let n = fs.len() as f64;
        let mut s1 = DMatrix::zeros(fs.basis_len(), fs.basis_len());
        let mut s2 = s1.clone();
        for i in 0..fs.len() {
            let f = fs.f_matrix(i);
            s1 += &f * fs.k2_dag() * f.transpose();
            s2 += f.transpose() * fs.k1_dag() * &f;
        }
        let fb = fs.f_bar();
        let m1 = s1 / n - fb * fs.k2_dag() * fb.transpose();
        let m2 = s2 / n - fb.transpose() * fs.k1_dag() * fb;
        let p1 = fs.k1_dag_sqrt() * m1 * fs.k1_dag_sqrt();
        let p2 = fs.k2_dag_sqrt() * m2 * fs.k2_dag_sqrt();
        let ops = operator_matrices(&fs);
        assert!((&ops.p1 - &p1).amax() < 1e-10 * p1.amax());
        assert!((&ops.p2 - &p2).amax() < 1e-10 * p2.amax());
    }

    #[test]
    fn latents_match_direct_formula() {
        let sample = random_sample(4, 8, 6, 5);
        let opts = FitOptions { dims: Some((3, 2)), ..Default::default() };
        let fs = build_feature_set(&sample, odd(0.5), odd(0.5), opts.features, Execution::Sequential).unwrap();
        let model = fit_features(&fs, opts.dims).unwrap();
        for (i, z) in model.latents(&fs).iter().enumerate() {
            let direct = model.a().transpose()
                * fs.k1_dag_sqrt()
                * (fs.f_matrix(i) - fs.f_bar())
                * fs.k2_dag_sqrt()
                * model.b();
            assert!((z.as_matrix() - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn identical_observations_have_no_variance() {
        let x = random_sample(9, 1, 5, 5).get(0).clone();
        let sample = MatrixSample::new(vec![x.clone(); 6]).unwrap();
        let (model, latents) =
            fit_transform(&sample, odd(1.0), odd(1.0), &FitOptions { dims: Some((2, 2)), ..Default::default() })
                .unwrap();
        assert!(model.eigen_report().iter().all(|r| r.eigenvalue.abs() <= 1e-10));
        for z in latents {
            assert!(z.as_matrix().amax() <= 1e-10);
        }
        let single = MatrixSample::new(vec![x]).unwrap();
        let m = fit(&single, odd(1.0), odd(1.0), &FitOptions::default()).unwrap();
        assert!(m.eigvals1().iter().all(|v| *v == 0.0));
        assert_eq!(m.dims(), (1, 1));
    }

    #[test]
    fn model_invariants() {
        let sample = random_sample(11, 12, 6, 5);
        let opts = FitOptions { dims: Some((3, 3)), ..Default::default() };
        let model = fit(&sample, odd(0.6), odd(0.9), &opts).unwrap();
        let ata = model.a().transpose() * model.a();
        let btb = model.b().transpose() * model.b();
        assert!((ata - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!((btb - DMatrix::identity(3, 3)).amax() < 1e-8);
        for vals in [model.eigvals1(), model.eigvals2()] {
            assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
            assert!(vals[vals.len() - 1] >= -1e-8 * vals[0]);
        }
        let report = model.eigen_report();
        assert_eq!(report.len(), 2 * model.basis_len());
        assert_eq!(report[0].eigenvalue, model.eigvals1()[0]);
        assert_eq!(report[model.basis_len()].side, Side::Right);
        for col in model.a().column_iter() {
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn scree_dims_and_shape_contract() {
        let sample = random_sample(12, 10, 5, 5);
        let model = fit(&sample, odd(0.6), odd(0.6), &FitOptions::default()).unwrap();
        let (d1, d2) = model.dims();
        assert_eq!(d1, scree_select(model.eigvals1().as_slice()));
        assert_eq!(d2, scree_select(model.eigvals2().as_slice()));

        let m11 = fit(&sample, odd(0.6), odd(0.6), &FitOptions { dims: Some((1, 1)), ..Default::default() }).unwrap();
        assert_eq!(m11.transform(sample.get(0)).unwrap().shape(), (1, 1));
    }

    #[test]
    fn fit_errors() {
        let sample = random_sample(13, 4, 5, 5);
        let too_big = FitOptions { dims: Some((5, 1)), ..Default::default() };
        assert!(matches!(fit(&sample, odd(1.0), odd(1.0), &too_big), Err(MnpcaError::InvalidParameter(_))));
        let even = KernelSpec::gaussian(1.0, Parity::Even).unwrap();
        assert!(matches!(
            fit(&sample, odd(1.0), even, &FitOptions::default()),
            Err(MnpcaError::ParityMismatch { .. })
        ));
        let model = fit(&sample, odd(1.0), odd(1.0), &FitOptions::default()).unwrap();
        assert!(matches!(model.transform(&DMatrix::zeros(4, 5)), Err(MnpcaError::DimensionMismatch(_))));
        assert!(matches!(model.transform(&DMatrix::zeros(5, 5)), Err(MnpcaError::RankDeficient { .. })));
    }

    #[test]
    fn transform_reproduces_in_sample_latents() {
        let sample = random_sample(14, 9, 7, 6);
        let opts = FitOptions { dims: Some((2, 3)), ..Default::default() };
        let (model, latents) = fit_transform(&sample, odd(0.8), odd(0.8), &opts).unwrap();
        for (i, z) in latents.iter().enumerate() {
            let t = model.transform(sample.get(i)).unwrap();
            assert!((t.as_matrix() - z.as_matrix()).amax() <= 1e-10);
        }
    }

    #[test]
    fn pseudo_inverse_mode_runs() {
        let sample = random_sample(15, 20, 6, 5);
        let opts = FitOptions {
            features: FeatureConfig { r: 5, m: 1, regularization: Regularization::PseudoInverse, ..Default::default() },
            dims: Some((2, 2)),
            ..Default::default()
        };
        let model = fit(&sample, KernelSpec::linear_raw(), KernelSpec::linear_raw(), &opts).unwrap();
        // only p1 = 6 (p2 = 5) directions carry variance under the linear kernel
        assert!(model.eigvals1().iter().skip(6).all(|v| v.abs() < 1e-8 * model.eigvals1()[0]));
        assert!(model.eigvals2().iter().skip(5).all(|v| v.abs() < 1e-8 * model.eigvals2()[0]));
    }
}
