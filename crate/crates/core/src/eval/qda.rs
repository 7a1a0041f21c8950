//! Quadratic discriminant analysis on vectorised latents.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MnpcaError, Result};

pub const DEFAULT_QDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct QdaClass {
    pub label: u32,
    pub prior: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub log_det: f64,
    chol: Cholesky<f64, Dyn>,
}

/// Classes are kept in ascending label order.
#[derive(Debug, Clone)]
pub struct QdaModel {
    classes: Vec<QdaClass>,
    dim: usize,
}

/// Per-class Gaussians with sample covariance (divisor `n_c - 1`) plus
/// `ridge * trace / dim * I`; a zero trace falls back to `ridge * I`.
pub fn qda_fit(features: &[DVector<f64>], labels: &[u32], ridge: f64) -> Result<QdaModel> {
    if features.len() != labels.len() {
        return Err(MnpcaError::DimensionMismatch(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(MnpcaError::InvalidParameter(format!("ridge must be non-negative, got {ridge}")));
    }
    let dim = features.first().ok_or(MnpcaError::Empty("training features"))?.len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(MnpcaError::DimensionMismatch("feature vectors differ in length".into()));
    }
    if features.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(MnpcaError::NonFinite("training features"));
    }

    let mut groups: BTreeMap<u32, Vec<&DVector<f64>>> = BTreeMap::new();
    for (f, &l) in features.iter().zip(labels) {
        groups.entry(l).or_default().push(f);
    }
    if groups.len() < 2 {
        return Err(MnpcaError::Classifier(format!("need at least 2 classes, got {}", groups.len())));
    }
    let total = features.len() as f64;
    let mut classes = Vec::with_capacity(groups.len());
    for (label, members) in groups {
        let k = members.len();
        if k < 2 {
            return Err(MnpcaError::Classifier(format!("class {label} has {k} sample; need at least 2")));
        }
        let mean = members.iter().fold(DVector::zeros(dim), |acc, f| acc + *f) / k as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for f in &members {
            let c = *f - &mean;
            cov += &c * c.transpose();
        }
        cov /= (k - 1) as f64;
        let trace = cov.trace();
        let shift = if trace > 0.0 { ridge * trace / dim as f64 } else { ridge };
        for i in 0..dim {
            cov[(i, i)] += shift;
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| MnpcaError::Classifier(format!("covariance of class {label} is not positive definite")))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        classes.push(QdaClass { label, prior: k as f64 / total, mean, covariance: cov, log_det, chol });
    }
    Ok(QdaModel { classes, dim })
}

impl QdaModel {
    pub fn classes(&self) -> &[QdaClass] {
        &self.classes
    }

    /// `log prior - log det / 2 - Mahalanobis^2 / 2` for each class.
    pub fn scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(MnpcaError::DimensionMismatch(format!("query has length {}, expected {}", x.len(), self.dim)));
        }
        Ok(self
            .classes
            .iter()
            .map(|c| {
                let d = x - &c.mean;
                let z = c.chol.l().solve_lower_triangular(&d).expect("Cholesky factor has a positive diagonal");
                c.prior.ln() - 0.5 * c.log_det - 0.5 * z.norm_squared()
            })
            .collect())
    }

    /// Highest-scoring class; ties go to the lowest label.
    pub fn predict(&self, x: &DVector<f64>) -> Result<u32> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(self.classes[best].label)
    }
}

pub fn qda_predict(model: &QdaModel, x: &DVector<f64>) -> Result<u32> {
    model.predict(x)
}
