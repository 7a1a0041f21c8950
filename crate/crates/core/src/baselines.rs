//! Comparison methods: linear (2D)^2PCA and a kernel 2DPCA chain.

use nalgebra::{DMatrix, DVector};

use crate::error::{MnpcaError, Result};
use crate::exec::{map_indexed, Execution};
use crate::kernels::BaseKernel;
use crate::linalg::{canonicalize_column_signs, sym_eigen_desc, symmetrize};
use crate::mnpca::LatentMatrix;
use crate::svd_features::MatrixSample;

/// Linear two-sided PCA: `Z = A'(X - X_bar)B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoDPcaModel {
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
    pub(crate) mean: DMatrix<f64>,
    pub(crate) left_eigenvalues: DVector<f64>,
    pub(crate) right_eigenvalues: DVector<f64>,
}

/// Row and column scatter matrices `1/n sum (X_i - X_bar)(X_i - X_bar)'` and
/// `1/n sum (X_i - X_bar)'(X_i - X_bar)`.
pub fn scatter_matrices(sample: &MatrixSample) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p1, p2) = sample.shape();
    let mean = sample.mean();
    let mut left = DMatrix::zeros(p1, p1);
    let mut right = DMatrix::zeros(p2, p2);
    for x in sample.observations() {
        let c = x - &mean;
        left += &c * c.transpose();
        right += c.transpose() * &c;
    }
    let n = sample.len() as f64;
    (symmetrize(&(left / n)), symmetrize(&(right / n)))
}

pub fn fit_2d2pca(sample: &MatrixSample, d1: usize, d2: usize) -> Result<TwoDPcaModel> {
    let (p1, p2) = sample.shape();
    if d1 == 0 || d2 == 0 || d1 > p1 || d2 > p2 {
        return Err(MnpcaError::InvalidParameter(format!(
            "latent dimensions ({d1}, {d2}) must lie within ({p1}, {p2})"
        )));
    }
    let (left, right) = scatter_matrices(sample);
    let (lv, lvec) = sym_eigen_desc(&left);
    let (rv, rvec) = sym_eigen_desc(&right);
    let mut a = lvec.columns(0, d1).into_owned();
    let mut b = rvec.columns(0, d2).into_owned();
    canonicalize_column_signs(&mut a);
    canonicalize_column_signs(&mut b);
    Ok(TwoDPcaModel { a, b, mean: sample.mean(), left_eigenvalues: lv, right_eigenvalues: rv })
}

impl TwoDPcaModel {
    pub fn from_parts(a: DMatrix<f64>, b: DMatrix<f64>, mean: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != mean.nrows() || b.nrows() != mean.ncols() {
            return Err(MnpcaError::DimensionMismatch("projection and mean shapes disagree".into()));
        }
        let (lv, rv) = (DVector::zeros(0), DVector::zeros(0));
        Ok(Self { a, b, mean, left_eigenvalues: lv, right_eigenvalues: rv })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    /// Eigenvalues of the row scatter matrix (empty for a model loaded from disk).
    pub fn left_eigenvalues(&self) -> &DVector<f64> {
        &self.left_eigenvalues
    }

    pub fn right_eigenvalues(&self) -> &DVector<f64> {
        &self.right_eigenvalues
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.ncols(), self.b.ncols())
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        if x.shape() != self.mean.shape() {
            return Err(MnpcaError::DimensionMismatch(format!(
                "observation is {}x{}, model expects {}x{}",
                x.nrows(),
                x.ncols(),
                self.mean.nrows(),
                self.mean.ncols()
            )));
        }
        Ok(LatentMatrix(self.a.transpose() * (x - &self.mean) * &self.b))
    }
}

/// Mean squared pairwise distance of the vectorised observations,
/// `1/n^2 sum_{i,j} |x_i - x_j|^2` (diagonal zeros included).
///
/// Uses the identity `2 (1/n sum |x_i|^2 - |x_bar|^2)`.
pub fn kong_bandwidth(sample: &MatrixSample) -> f64 {
    let n = sample.len() as f64;
    let mean_sq = sample.observations().iter().map(|x| x.norm_squared()).sum::<f64>() / n;
    (2.0 * (mean_sq - sample.mean().norm_squared())).max(0.0)
}

/// Kernel 2DPCA on the pooled rows followed by linear column reduction.
///
/// Stage one runs kernel PCA over all `n p1` rows (vectors in `R^p2`) and keeps
/// `d1` components, mapping each observation to a `p1 x d1` score matrix `Y`.
/// Stage two treats `Y'` (`d1 x p1`) as the new observation and reduces its
/// `p1` columns to `d2` with linear 2DPCA, giving `Z = (Y - Y_bar)' B`.
#[derive(Debug, Clone, PartialEq)]
pub struct K2dpcaModel {
    pub(crate) kernel: BaseKernel,
    /// `N x p2`, one training row per matrix row.
    pub(crate) rows: DMatrix<f64>,
    /// `N x d1`, scaled so each component has unit norm in feature space.
    pub(crate) alpha: DMatrix<f64>,
    pub(crate) eigenvalues: DVector<f64>,
    /// Column means of the training Gram matrix, and its grand mean.
    pub(crate) gram_col_means: DVector<f64>,
    pub(crate) gram_mean: f64,
    /// `p1 x d1` mean score matrix.
    pub(crate) score_mean: DMatrix<f64>,
    /// `p1 x d2`.
    pub(crate) column_reducer: DMatrix<f64>,
    pub(crate) p1: usize,
}

/// Double-centers a Gram matrix: `H K H` with `H = I - 11'/N`.
pub fn double_center(k: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = k.nrows();
    let col_means = DVector::from_iterator(n, k.column_iter().map(|c| c.mean()));
    let grand = col_means.mean();
    let centered = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - col_means[i] - col_means[j] + grand);
    (symmetrize(&centered), col_means, grand)
}

fn stack_rows(sample: &MatrixSample) -> DMatrix<f64> {
    let (p1, p2) = sample.shape();
    let mut rows = DMatrix::zeros(sample.len() * p1, p2);
    for (i, x) in sample.observations().iter().enumerate() {
        rows.view_mut((i * p1, 0), (p1, p2)).copy_from(x);
    }
    rows
}

fn row_gram(kernel: &BaseKernel, rows: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
    let n = rows.nrows();
    let rt = rows.transpose(); // columns are rows, contiguous
    let cols = map_indexed(exec, n, |i| {
        let xi = rt.column(i);
        (0..n).map(|j| kernel.eval_unchecked(xi.as_slice(), rt.column(j).as_slice())).collect::<Vec<_>>()
    });
    let k = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    symmetrize(&k)
}

pub fn fit_k2dpca(
    sample: &MatrixSample,
    kernel: BaseKernel,
    d1: usize,
    d2: usize,
    exec: Execution,
) -> Result<K2dpcaModel> {
    kernel.validate()?;
    let (p1, p2) = sample.shape();
    let rows = stack_rows(sample);
    let n_rows = rows.nrows();
    if d1 == 0 || d2 == 0 || d1 > n_rows.min(p2) || d2 > p1 {
        return Err(MnpcaError::InvalidParameter(format!(
            "latent dimensions ({d1}, {d2}) out of range for {n_rows} rows of length {p2} and p1 = {p1}"
        )));
    }

    let gram = row_gram(&kernel, &rows, exec);
    let (centered, gram_col_means, gram_mean) = double_center(&gram);
    let (vals, vecs) = sym_eigen_desc(&centered);
    let top = vals[0];
    let mut alpha = vecs.columns(0, d1).into_owned();
    canonicalize_column_signs(&mut alpha);
    for k in 0..d1 {
        if top <= 0.0 || vals[k] <= 1e-12 * top {
            return Err(MnpcaError::IllConditioned(if vals[k] > 0.0 { top / vals[k] } else { f64::INFINITY }));
        }
        alpha.column_mut(k).scale_mut(1.0 / vals[k].sqrt());
    }
    let eigenvalues = vals.rows(0, d1).into_owned() / n_rows as f64;

    // training scores: centered Gram times alpha
    let scores = &centered * &alpha;
    let per_obs: Vec<DMatrix<f64>> =
        (0..sample.len()).map(|i| scores.view((i * p1, 0), (p1, d1)).into_owned()).collect();

    let mut model = K2dpcaModel {
        kernel,
        rows,
        alpha,
        eigenvalues,
        gram_col_means,
        gram_mean,
        score_mean: DMatrix::zeros(p1, d1),
        column_reducer: DMatrix::zeros(p1, d2),
        p1,
    };
    model.fit_column_reducer(&per_obs, d2);
    Ok(model)
}

impl K2dpcaModel {
    fn fit_column_reducer(&mut self, scores: &[DMatrix<f64>], d2: usize) {
        let (p1, d1) = (self.p1, self.alpha.ncols());
        let mut mean = DMatrix::zeros(p1, d1);
        for y in scores {
            mean += y;
        }
        mean /= scores.len() as f64;
        // Y' is d1 x p1; its column scatter is 1/n sum (Y - Y_bar)(Y - Y_bar)'
        let mut scatter = DMatrix::zeros(p1, p1);
        for y in scores {
            let c = y - &mean;
            scatter += &c * c.transpose();
        }
        scatter /= scores.len() as f64;
        let (_, vecs) = sym_eigen_desc(&scatter);
        let mut reducer = vecs.columns(0, d2).into_owned();
        canonicalize_column_signs(&mut reducer);
        self.score_mean = mean;
        self.column_reducer = reducer;
    }

    pub fn kernel(&self) -> BaseKernel {
        self.kernel
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.alpha.ncols(), self.column_reducer.ncols())
    }

    /// Kernel PCA eigenvalues (variance of each component's training scores).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Stage-one scores (`p1 x d1`) of an observation.
    pub fn row_scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p2 = self.rows.ncols();
        if x.shape() != (self.p1, p2) {
            return Err(MnpcaError::DimensionMismatch(format!(
                "observation is {}x{}, model expects {}x{p2}",
                x.nrows(),
                x.ncols(),
                self.p1
            )));
        }
        let n_rows = self.rows.nrows();
        let rows_t = self.rows.transpose();
        let mut out = DMatrix::zeros(self.p1, self.alpha.ncols());
        for a in 0..self.p1 {
            let xa: Vec<f64> = x.row(a).iter().copied().collect();
            let kv = DVector::from_iterator(
                n_rows,
                (0..n_rows).map(|j| self.kernel.eval_unchecked(&xa, rows_t.column(j).as_slice())),
            );
            let mean = kv.mean();
            let centered = DVector::from_fn(n_rows, |j, _| kv[j] - mean - self.gram_col_means[j] + self.gram_mean);
            out.set_row(a, &(centered.transpose() * &self.alpha));
        }
        Ok(out)
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        let y = self.row_scores(x)?;
        Ok(LatentMatrix((y - &self.score_mean).transpose() * &self.column_reducer))
    }
}
