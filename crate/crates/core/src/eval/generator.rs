//! Checkerboard-like simulated images.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MnpcaError, Result};
use crate::svd_features::MatrixSample;

pub const IMAGE_SIZE: usize = 10;

/// Observations with one class identifier each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: MatrixSample,
    pub labels: Vec<u32>,
}

impl LabeledSample {
    pub fn new(sample: MatrixSample, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != sample.len() {
            return Err(MnpcaError::DimensionMismatch(format!(
                "{} labels for {} observations",
                labels.len(),
                sample.len()
            )));
        }
        Ok(Self { sample, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let sample = self.sample.select(idx)?;
        Ok(Self { sample, labels: idx.iter().map(|&i| self.labels[i]).collect() })
    }
}

/// `u_j = cos((1 - alpha)(x - pi + 2 pi (j - 1) / 10))` for `j = 1..=10`.
pub fn u_curve(x: f64, alpha: f64) -> Result<DVector<f64>> {
    if !(-PI..=PI).contains(&x) {
        return Err(MnpcaError::InvalidParameter(format!("x = {x} outside [-pi, pi]")));
    }
    if !(alpha > -1.0 && alpha < 1.0) {
        return Err(MnpcaError::InvalidParameter(format!("alpha = {alpha} outside (-1, 1)")));
    }
    Ok(u_curve_unchecked(x, alpha))
}

fn u_curve_unchecked(x: f64, alpha: f64) -> DVector<f64> {
    let n = IMAGE_SIZE as f64;
    DVector::from_fn(IMAGE_SIZE, |j, _| ((1.0 - alpha) * (x - PI + 2.0 * PI * j as f64 / n)).cos())
}

/// Images `u(t1) u(t2)' + u(t3) u(t4)'` with `t` iid uniform on `(-pi, pi)`.
///
/// The angle stream is chosen by the sign of `alpha`, so a group drawn at
/// `alpha` under one seed is the same whichever label it carries.
fn draw_images(count: usize, alpha: f64, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(if alpha > 0.0 { 0 } else { 1 });
    (0..count)
        .map(|_| {
            let t: [f64; 4] = std::array::from_fn(|_| rng.random_range(-PI..PI));
            let u = |x| u_curve_unchecked(x, alpha);
            u(t[0]) * u(t[1]).transpose() + u(t[2]) * u(t[3]).transpose()
        })
        .collect()
}

/// `n / 2` images at `alpha` (label 1) followed by `n / 2` at `-alpha` (label 2).
pub fn generate_checkerboard(n: usize, alpha: f64, seed: u64) -> Result<LabeledSample> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(MnpcaError::InvalidParameter(format!("n must be positive and even, got {n}")));
    }
    if !(alpha > -1.0 && alpha < 1.0) || alpha == 0.0 {
        return Err(MnpcaError::InvalidParameter(format!("alpha = {alpha} must be non-zero in (-1, 1)")));
    }
    let half = n / 2;
    let mut images = draw_images(half, alpha, seed);
    images.extend(draw_images(half, -alpha, seed));
    let labels = std::iter::repeat_n(1, half).chain(std::iter::repeat_n(2, half)).collect();
    LabeledSample::new(MatrixSample::new(images)?, labels)
}
