//! FashionMNIST ingestion from the Kaggle CSV layout: a header line, then one
//! row per image holding the label followed by 784 pixel intensities.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{MnpcaError, Result};
use crate::eval::generator::LabeledSample;
use crate::svd_features::MatrixSample;

pub const FASHION_SIDE: usize = 28;

/// Reads the images whose label is in `classes`, as `28 x 28` matrices (pixels
/// row-major, scaled to `[0, 1]`).
pub fn load_fashion_mnist_csv(path: &Path, classes: &[u32]) -> Result<LabeledSample> {
    let wanted: BTreeSet<u32> = classes.iter().copied().collect();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let width = FASHION_SIDE * FASHION_SIDE + 1;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(MnpcaError::Parse(format!(
                "row {} has {} fields, expected {width}",
                line + 2,
                record.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| MnpcaError::Parse(format!("row {}: {e}: {s:?}", line + 2)))
        };
        let label = parse(&record[0])?;
        if label.fract() != 0.0 || label < 0.0 {
            return Err(MnpcaError::Parse(format!("row {}: label {label} is not a class id", line + 2)));
        }
        let label = label as u32;
        if !wanted.contains(&label) {
            continue;
        }
        let mut pixels = Vec::with_capacity(width - 1);
        for field in record.iter().skip(1) {
            let v = parse(field)?;
            if !(0.0..=255.0).contains(&v) {
                return Err(MnpcaError::Parse(format!("row {}: pixel {v} outside [0, 255]", line + 2)));
            }
            pixels.push(v / 255.0);
        }
        images.push(DMatrix::from_row_slice(FASHION_SIDE, FASHION_SIDE, &pixels));
        labels.push(label);
    }
    let found: BTreeSet<u32> = labels.iter().copied().collect();
    if found.len() < 2 {
        return Err(MnpcaError::InvalidParameter(format!(
            "filtering to classes {wanted:?} left {} class(es)",
            found.len()
        )));
    }
    LabeledSample::new(MatrixSample::new(images)?, labels)
}
