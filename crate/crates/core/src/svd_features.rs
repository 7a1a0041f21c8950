//! Truncated SVDs of the observations and the kernel feature matrices built
//! from them.
//!
//! Each observation `X_i` is summarised by its top `r` singular triplets
//! `(sigma_ij, u_ij, v_ij)`. The leading `m` left (right) singular vectors of
//! every observation form the left (right) basis, and
//!
//! ```text
//! F_i = sum_j sigma_ij k1(u_ij) k2(v_ij)'
//! ```
//!
//! where `k1(x)` is the vector of kernel evaluations of `x` against the left
//! basis. `F_i` is kept in factored form (`L_i diag(sigma_i) R_i'`), which is
//! what the operator construction in [`crate::mnpca`] consumes.

use nalgebra::{DMatrix, DVector};

use crate::error::{MnpcaError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::kernels::KernelSpec;
use crate::linalg::{inverse_factors, thin_svd, Regularization};

pub const DEFAULT_TIE_TOL: f64 = 1e-10;

/// A sample of equally-sized real matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSample {
    observations: Vec<DMatrix<f64>>,
    rows: usize,
    cols: usize,
}

impl MatrixSample {
    pub fn new(observations: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = observations.first().ok_or(MnpcaError::Empty("matrix sample"))?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(MnpcaError::Empty("observation"));
        }
        for (i, x) in observations.iter().enumerate() {
            if x.shape() != (rows, cols) {
                return Err(MnpcaError::DimensionMismatch(format!(
                    "observation {i} is {}x{}, expected {rows}x{cols}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(MnpcaError::NonFinite("observation"));
            }
        }
        Ok(Self { observations, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// `(p1, p2)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn observations(&self) -> &[DMatrix<f64>] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &DMatrix<f64> {
        &self.observations[i]
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for x in &self.observations {
            acc += x;
        }
        acc / self.len() as f64
    }

    /// Sub-sample by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.observations[i].clone()).collect())
    }

    pub fn into_observations(self) -> Vec<DMatrix<f64>> {
        self.observations
    }
}

/// Top-`r` singular triplets of one matrix, singular values strictly
/// decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    singular_values: Vec<f64>,
    /// `p1 x r`, orthonormal columns.
    left: DMatrix<f64>,
    /// `p2 x r`, orthonormal columns.
    right: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn left(&self, j: usize) -> DVector<f64> {
        self.left.column(j).into_owned()
    }

    pub fn right(&self, j: usize) -> DVector<f64> {
        self.right.column(j).into_owned()
    }

    /// Flips the joint sign of singular pair `j`; the decomposition stays valid.
    pub fn flip_pair(&mut self, j: usize) {
        self.left.column_mut(j).neg_mut();
        self.right.column_mut(j).neg_mut();
    }

    /// `sum_j sigma_j u_j v_j'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.singular_values[j];
        }
        scaled * self.right.transpose()
    }
}

/// Top-`r` singular triplets of `x`.
///
/// Fails when the matrix has fewer than `r` singular values above
/// `tie_tol * sigma_1`, or when two of the top `r` singular values are closer
/// than `tie_tol * sigma_1` (the singular pairs would not be unique up to sign).
pub fn truncated_svd(x: &DMatrix<f64>, r: usize, tie_tol: f64) -> Result<TruncatedSvd> {
    let (p1, p2) = x.shape();
    if r == 0 || r > p1.min(p2) {
        return Err(MnpcaError::InvalidParameter(format!(
            "rank r = {r} must be in 1..={} for a {p1}x{p2} matrix",
            p1.min(p2)
        )));
    }
    if !(tie_tol.is_finite() && tie_tol >= 0.0) {
        return Err(MnpcaError::InvalidParameter(format!("tie_tol must be non-negative, got {tie_tol}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MnpcaError::NonFinite("observation"));
    }
    let (sv, u, v) = thin_svd(x);
    let values = sv[..r].to_vec();

    let scale = values[0];
    if values[r - 1] <= tie_tol * scale {
        return Err(MnpcaError::RankDeficient { requested: r, index: r, value: values[r - 1] });
    }
    for j in 0..r - 1 {
        let gap = values[j] - values[j + 1];
        if gap <= tie_tol * scale {
            return Err(MnpcaError::RepeatedSingularValue { index: j + 1, next: j + 2, gap });
        }
    }

    let left = u.columns(0, r).into_owned();
    let right = v.columns(0, r).into_owned();
    Ok(TruncatedSvd { singular_values: values, left, right })
}

/// Truncated SVDs of every observation in a sample.
pub fn sample_svds(sample: &MatrixSample, r: usize, tie_tol: f64, exec: Execution) -> Result<Vec<TruncatedSvd>> {
    try_map_indexed(exec, sample.len(), |i| truncated_svd(sample.get(i), r, tie_tol))
}

/// One observation's feature matrix `F = L diag(sigma) R'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFactor {
    /// `mn x r`: column `j` is `k1(u_j)`.
    pub left: DMatrix<f64>,
    pub sigma: DVector<f64>,
    /// `mn x r`: column `j` is `k2(v_j)`.
    pub right: DMatrix<f64>,
}

impl FeatureFactor {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.sigma[j];
        }
        scaled * self.right.transpose()
    }
}

/// Settings shared by feature construction and fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Rank of each observation's truncated SVD.
    pub r: usize,
    /// Singular spaces per observation used in the basis.
    pub m: usize,
    pub regularization: Regularization,
    pub tie_tol: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { r: 2, m: 1, regularization: Regularization::default(), tie_tol: DEFAULT_TIE_TOL }
    }
}

impl FeatureConfig {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.regularization = Regularization::Ridge { eps };
        self
    }
}

/// Basis, Gram matrices, their regularized inverses and the per-observation
/// feature matrices of a sample.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    config: FeatureConfig,
    k1: KernelSpec,
    k2: KernelSpec,
    shape: (usize, usize),
    left_basis: Vec<DVector<f64>>,
    right_basis: Vec<DVector<f64>>,
    gram1: DMatrix<f64>,
    gram2: DMatrix<f64>,
    gram1_inv: DMatrix<f64>,
    gram1_inv_sqrt: DMatrix<f64>,
    gram2_inv: DMatrix<f64>,
    gram2_inv_sqrt: DMatrix<f64>,
    factors: Vec<FeatureFactor>,
    f_bar: DMatrix<f64>,
}

pub(crate) fn check_kernel_pair(k1: &KernelSpec, k2: &KernelSpec) -> Result<()> {
    if k1.compatible_with(k2) {
        Ok(())
    } else {
        Err(MnpcaError::ParityMismatch { left: k1.parity().to_string(), right: k2.parity().to_string() })
    }
}

/// Builds the feature set of a sample: SVDs, basis, Gram matrices and `F_i`.
pub fn build_feature_set(
    sample: &MatrixSample,
    k1: KernelSpec,
    k2: KernelSpec,
    config: FeatureConfig,
    exec: Execution,
) -> Result<FeatureSet> {
    check_config(&config, sample.shape())?;
    check_kernel_pair(&k1, &k2)?;
    let svds = sample_svds(sample, config.r, config.tie_tol, exec)?;
    FeatureSet::from_svds(&svds, k1, k2, config, exec)
}

fn check_config(config: &FeatureConfig, (p1, p2): (usize, usize)) -> Result<()> {
    if config.m == 0 || config.m > config.r || config.r > p1.min(p2) {
        return Err(MnpcaError::InvalidParameter(format!(
            "need 1 <= m <= r <= min(p1, p2); got m = {}, r = {}, p1 = {p1}, p2 = {p2}",
            config.m, config.r
        )));
    }
    config.regularization.validate()
}

impl FeatureSet {
    /// Builds the feature set from precomputed SVDs (all of rank `config.r`).
    pub fn from_svds(
        svds: &[TruncatedSvd],
        k1: KernelSpec,
        k2: KernelSpec,
        config: FeatureConfig,
        exec: Execution,
    ) -> Result<Self> {
        let first = svds.first().ok_or(MnpcaError::Empty("svd list"))?;
        let shape = (first.left.nrows(), first.right.nrows());
        check_config(&config, shape)?;
        check_kernel_pair(&k1, &k2)?;
        for (i, s) in svds.iter().enumerate() {
            if s.rank() != config.r || (s.left.nrows(), s.right.nrows()) != shape {
                return Err(MnpcaError::DimensionMismatch(format!(
                    "svd {i} has rank {} on {}x{}, expected rank {} on {}x{}",
                    s.rank(),
                    s.left.nrows(),
                    s.right.nrows(),
                    config.r,
                    shape.0,
                    shape.1
                )));
            }
        }

        let m = config.m;
        let left_basis: Vec<DVector<f64>> =
            svds.iter().flat_map(|s| (0..m).map(move |j| s.left(j))).collect();
        let right_basis: Vec<DVector<f64>> =
            svds.iter().flat_map(|s| (0..m).map(move |j| s.right(j))).collect();

        let gram1 = k1.gram(&left_basis);
        let gram2 = k2.gram(&right_basis);
        let inv1 = inverse_factors(&gram1, config.regularization)?;
        let inv2 = inverse_factors(&gram2, config.regularization)?;

        let factors = crate::exec::map_indexed(exec, svds.len(), |i| {
            feature_factor(&svds[i], &k1, &k2, &left_basis, &right_basis)
        });

        let mn = left_basis.len();
        let mut f_bar = DMatrix::zeros(mn, mn);
        for f in &factors {
            f_bar += f.dense();
        }
        f_bar /= factors.len() as f64;

        Ok(Self {
            config,
            k1,
            k2,
            shape,
            left_basis,
            right_basis,
            gram1,
            gram2,
            gram1_inv: inv1.inverse,
            gram1_inv_sqrt: inv1.inverse_sqrt,
            gram2_inv: inv2.inverse,
            gram2_inv_sqrt: inv2.inverse_sqrt,
            factors,
            f_bar,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn kernels(&self) -> (KernelSpec, KernelSpec) {
        (self.k1, self.k2)
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Observation shape `(p1, p2)`.
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// Basis size `m * n`.
    pub fn basis_len(&self) -> usize {
        self.left_basis.len()
    }

    pub fn left_basis(&self) -> &[DVector<f64>] {
        &self.left_basis
    }

    pub fn right_basis(&self) -> &[DVector<f64>] {
        &self.right_basis
    }

    pub fn k1(&self) -> &DMatrix<f64> {
        &self.gram1
    }

    pub fn k2(&self) -> &DMatrix<f64> {
        &self.gram2
    }

    pub fn k1_dag(&self) -> &DMatrix<f64> {
        &self.gram1_inv
    }

    pub fn k2_dag(&self) -> &DMatrix<f64> {
        &self.gram2_inv
    }

    pub fn k1_dag_sqrt(&self) -> &DMatrix<f64> {
        &self.gram1_inv_sqrt
    }

    pub fn k2_dag_sqrt(&self) -> &DMatrix<f64> {
        &self.gram2_inv_sqrt
    }

    pub fn factors(&self) -> &[FeatureFactor] {
        &self.factors
    }

    /// Dense `F_i`.
    pub fn f_matrix(&self, i: usize) -> DMatrix<f64> {
        self.factors[i].dense()
    }

    pub fn f_bar(&self) -> &DMatrix<f64> {
        &self.f_bar
    }
}

/// Feature factor of one SVD against a fixed basis.
pub(crate) fn feature_factor(
    svd: &TruncatedSvd,
    k1: &KernelSpec,
    k2: &KernelSpec,
    left_basis: &[DVector<f64>],
    right_basis: &[DVector<f64>],
) -> FeatureFactor {
    let r = svd.rank();
    let mut left = DMatrix::zeros(left_basis.len(), r);
    let mut right = DMatrix::zeros(right_basis.len(), r);
    for j in 0..r {
        left.set_column(j, &k1.feature_vector(svd.left.column(j).as_slice(), left_basis));
        right.set_column(j, &k2.feature_vector(svd.right.column(j).as_slice(), right_basis));
    }
    FeatureFactor { left, sigma: DVector::from_column_slice(&svd.singular_values), right }
}
