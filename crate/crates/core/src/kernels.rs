//! Kernel functions and the odd/even kernels they induce.
//!
//! A base kernel `k` satisfying `k(x, y) = k(-x, -y)` induces
//!
//! * an odd kernel `k(x, y) - k(-x, y)`, and
//! * an even kernel `k(x, y) + k(-x, y)`,
//!
//! both positive semi-definite. Either parity makes the feature map blind to
//! the joint sign of a singular pair, which is what the two-sided projection
//! relies on.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MnpcaError, Result};

/// Base kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BaseKernelRepr", into = "BaseKernelRepr")]
pub enum BaseKernel {
    /// `x . y`
    Linear,
    /// `exp(-|x - y|^2 / (2 sigma2))`
    Gaussian { sigma2: f64 },
    /// `(x . y + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    Odd,
    Even,
    /// The plain linear kernel, which is already odd. Only valid with
    /// [`BaseKernel::Linear`]; avoids the factor two of the induced odd kernel.
    LinearRaw,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Odd => "odd",
            Parity::Even => "even",
            Parity::LinearRaw => "linear-raw",
        })
    }
}

/// A validated base kernel plus the parity used to induce the working kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr", into = "KernelSpecRepr")]
pub struct KernelSpec {
    base: BaseKernel,
    parity: Parity,
}

impl BaseKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseKernel::Linear => Ok(()),
            BaseKernel::Gaussian { sigma2 } => {
                if sigma2.is_finite() && sigma2 > 0.0 {
                    Ok(())
                } else {
                    Err(MnpcaError::InvalidParameter(format!(
                        "gaussian sigma2 must be positive and finite, got {sigma2}"
                    )))
                }
            }
            BaseKernel::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(MnpcaError::InvalidParameter("polynomial degree must be >= 1".into()))
                } else if !(offset.is_finite() && offset >= 0.0) {
                    Err(MnpcaError::InvalidParameter(format!(
                        "polynomial offset must be non-negative, got {offset}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseKernel::Linear => "linear",
            BaseKernel::Gaussian { .. } => "gaussian",
            BaseKernel::Polynomial { .. } => "polynomial",
        }
    }

    /// Evaluates the base kernel with shape and finiteness checks.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            BaseKernel::Linear => dot(x, y),
            BaseKernel::Gaussian { sigma2 } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma2)).exp()
            }
            BaseKernel::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
        }
    }

    /// `k(-x, y)` without materialising `-x`.
    #[inline]
    fn eval_reflected(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            BaseKernel::Linear => -dot(x, y),
            BaseKernel::Gaussian { sigma2 } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a + b) * (a + b)).sum();
                (-d2 / (2.0 * sigma2)).exp()
            }
            BaseKernel::Polynomial { degree, offset } => (offset - dot(x, y)).powi(degree as i32),
        }
    }

    /// Sup of `k(u, u)` over unit vectors `u`, for the induced odd/even kernels
    /// a bound of twice this value holds.
    pub fn unit_sphere_bound(&self) -> f64 {
        match *self {
            BaseKernel::Linear => 1.0,
            BaseKernel::Gaussian { .. } => 1.0,
            BaseKernel::Polynomial { degree, offset } => (1.0 + offset).powi(degree as i32),
        }
    }
}

impl KernelSpec {
    pub fn new(base: BaseKernel, parity: Parity) -> Result<Self> {
        base.validate()?;
        if parity == Parity::LinearRaw && base != BaseKernel::Linear {
            return Err(MnpcaError::InvalidParameter(format!(
                "linear-raw parity requires the linear base kernel, got {}",
                base.name()
            )));
        }
        Ok(Self { base, parity })
    }

    pub fn linear_raw() -> Self {
        Self { base: BaseKernel::Linear, parity: Parity::LinearRaw }
    }

    pub fn gaussian(sigma2: f64, parity: Parity) -> Result<Self> {
        Self::new(BaseKernel::Gaussian { sigma2 }, parity)
    }

    pub fn base(&self) -> BaseKernel {
        self.base
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Same parity and family with a new Gaussian bandwidth.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        match self.base {
            BaseKernel::Gaussian { .. } => Self::new(BaseKernel::Gaussian { sigma2 }, self.parity),
            _ => Err(MnpcaError::InvalidParameter(format!(
                "bandwidth only applies to the gaussian kernel, got {}",
                self.base.name()
            ))),
        }
    }

    /// Upper bound on `k(u, u)` for unit `u` under the working kernel.
    pub fn unit_sphere_bound(&self) -> f64 {
        match self.parity {
            Parity::LinearRaw => 1.0,
            Parity::Odd | Parity::Even => 2.0 * self.base.unit_sphere_bound(),
        }
    }

    /// Base kernel value, ignoring parity.
    pub fn eval_base(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.base.eval(x, y)
    }

    /// Working (parity-induced) kernel value.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.parity {
            Parity::LinearRaw => dot(x, y),
            Parity::Odd => self.base.eval_unchecked(x, y) - self.base.eval_reflected(x, y),
            Parity::Even => self.base.eval_unchecked(x, y) + self.base.eval_reflected(x, y),
        }
    }

    /// `(k(x, b_1), ..., k(x, b_N))'`.
    pub fn feature_vector(&self, x: &[f64], basis: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(basis.len(), basis.iter().map(|b| self.eval_unchecked(x, b.as_slice())))
    }

    /// Gram matrix of the working kernel over `points`.
    pub fn gram(&self, points: &[DVector<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(points[i].as_slice(), points[j].as_slice());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// True when the two specs may be paired on the two sides of a matrix.
    pub fn compatible_with(&self, other: &KernelSpec) -> bool {
        self.parity == other.parity
    }
}

/// Default Gaussian bandwidth `|G|_F / n` where `G` holds the pairwise inner
/// products of `vectors` (typically the leading left singular vectors).
///
/// Flipping the sign of any vector only flips signs of entries of `G`, so the
/// result does not depend on the sign convention of the SVD.
pub fn default_bandwidth(vectors: &[DVector<f64>]) -> Result<f64> {
    let n = vectors.len();
    if n == 0 {
        return Err(MnpcaError::Empty("bandwidth basis"));
    }
    let dim = vectors[0].len();
    let mut sum_sq = 0.0;
    for (i, u) in vectors.iter().enumerate() {
        if u.len() != dim {
            return Err(MnpcaError::DimensionMismatch(format!(
                "basis vector {i} has length {}, expected {dim}",
                u.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(MnpcaError::NonFinite("bandwidth basis"));
        }
        for (j, v) in vectors.iter().enumerate() {
            let g = if i == j { u.norm_squared() } else { u.dot(v) };
            sum_sq += g * g;
        }
    }
    Ok(sum_sq.sqrt() / n as f64)
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MnpcaError::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MnpcaError::NonFinite("kernel argument"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSpecRepr {
    base: String,
    #[serde(default)]
    params: KernelParams,
    parity: Parity,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
}

fn base_from_repr(name: &str, params: &KernelParams) -> Result<BaseKernel> {
    let missing = |p: &str| MnpcaError::InvalidParameter(format!("{name} kernel needs `{p}`"));
    let base = match name {
        "linear" => BaseKernel::Linear,
        "gaussian" => BaseKernel::Gaussian { sigma2: params.sigma2.ok_or_else(|| missing("sigma2"))? },
        "polynomial" => BaseKernel::Polynomial {
            degree: params.degree.ok_or_else(|| missing("degree"))?,
            offset: params.offset.unwrap_or(0.0),
        },
        other => return Err(MnpcaError::InvalidParameter(format!("unknown kernel `{other}`"))),
    };
    base.validate()?;
    Ok(base)
}

fn base_params(base: BaseKernel) -> KernelParams {
    match base {
        BaseKernel::Linear => KernelParams::default(),
        BaseKernel::Gaussian { sigma2 } => KernelParams { sigma2: Some(sigma2), ..Default::default() },
        BaseKernel::Polynomial { degree, offset } => {
            KernelParams { degree: Some(degree), offset: Some(offset), ..Default::default() }
        }
    }
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = MnpcaError;

    fn try_from(r: KernelSpecRepr) -> Result<Self> {
        KernelSpec::new(base_from_repr(&r.base, &r.params)?, r.parity)
    }
}

impl From<KernelSpec> for KernelSpecRepr {
    fn from(k: KernelSpec) -> Self {
        KernelSpecRepr { base: k.base.name().to_string(), params: base_params(k.base), parity: k.parity }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseKernelRepr {
    base: String,
    #[serde(default)]
    params: KernelParams,
}

impl TryFrom<BaseKernelRepr> for BaseKernel {
    type Error = MnpcaError;

    fn try_from(r: BaseKernelRepr) -> Result<Self> {
        base_from_repr(&r.base, &r.params)
    }
}

impl From<BaseKernel> for BaseKernelRepr {
    fn from(k: BaseKernel) -> Self {
        BaseKernelRepr { base: k.name().to_string(), params: base_params(k) }
    }
}
