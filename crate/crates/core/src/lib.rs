//! Two-sided non-linear principal component analysis for matrix-valued data.
//!
//! Each observation is summarised by its truncated SVD. Singular vectors are
//! mapped through odd or even kernels, which cancel the sign ambiguity of
//! singular pairs, and the resulting feature operators are decomposed on the
//! left and right to give `d1 x d2` latent matrices.
//!
//! Work that is independent across observations or replicates runs on rayon
//! when the `parallel` feature is enabled (the default); [`Execution`] selects
//! the schedule at run time.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mnpca;
pub mod svd_features;

pub use error::{MnpcaError, Result};
pub use exec::Execution;
pub use kernels::{default_bandwidth, BaseKernel, KernelSpec, Parity};
pub use linalg::Regularization;
pub use mnpca::{fit, fit_transform, FitOptions, LatentMatrix, MnpcaModel};
pub use svd_features::{build_feature_set, truncated_svd, FeatureConfig, FeatureSet, MatrixSample, TruncatedSvd};
