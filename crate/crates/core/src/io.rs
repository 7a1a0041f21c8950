//! File formats.
//!
//! * Matrix samples: headerless CSV with the `n` observations stacked
//!   vertically (`n p1` rows of `p2` values) and a JSON sidecar `{n, p1, p2}`
//!   next to it (same stem, `.json`).
//! * Labels: CSV with a `label` header and one class id per observation.
//! * Models: JSON tagged by `"type"`; dense arrays are `{"shape": [rows, cols],
//!   "data": [row-major values]}`.
//! * Latents: CSV with one row per observation holding `Z` row-major.
//!
//! Reals are written with 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{K2dpcaModel, TwoDPcaModel};
use crate::error::{MnpcaError, Result};
use crate::kernels::{BaseKernel, KernelSpec};
use crate::linalg::Regularization;
use crate::mnpca::{LatentMatrix, MnpcaModel, ModelParts};
use crate::svd_features::{FeatureConfig, MatrixSample};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseArray {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for DenseArray {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        DenseArray { shape: [m.nrows(), m.ncols()], data }
    }
}

impl TryFrom<DenseArray> for DMatrix<f64> {
    type Error = MnpcaError;

    fn try_from(a: DenseArray) -> Result<Self> {
        let [r, c] = a.shape;
        if a.data.len() != r * c {
            return Err(MnpcaError::Parse(format!("array of shape {r}x{c} holds {} values", a.data.len())));
        }
        if a.data.iter().any(|v| !v.is_finite()) {
            return Err(MnpcaError::NonFinite("stored array"));
        }
        Ok(DMatrix::from_row_slice(r, c, &a.data))
    }
}

fn columns_to_array(cols: &[DVector<f64>]) -> DenseArray {
    let rows = cols.first().map_or(0, |c| c.len());
    (&DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])).into()
}

fn array_to_columns(a: DenseArray) -> Result<Vec<DVector<f64>>> {
    let m = DMatrix::try_from(a)?;
    Ok(m.column_iter().map(|c| c.into_owned()).collect())
}

fn finite_vec(v: Vec<f64>, what: &'static str) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MnpcaError::NonFinite(what));
    }
    Ok(DVector::from_vec(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleShape {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn write_matrix_sample(path: &Path, sample: &MatrixSample) -> Result<()> {
    let (p1, p2) = sample.shape();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for x in sample.observations() {
        for row in x.row_iter() {
            w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
        }
    }
    w.flush()?;
    let shape = SampleShape { n: sample.len(), p1, p2 };
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut side, &shape)?;
    writeln!(side)?;
    side.flush()?;
    Ok(())
}

pub fn read_matrix_sample(path: &Path) -> Result<MatrixSample> {
    let side = sidecar_path(path);
    let shape: SampleShape = serde_json::from_reader(BufReader::new(File::open(&side)?))?;
    let SampleShape { n, p1, p2 } = shape;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::with_capacity(n * p1 * p2);
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != p2 {
            return Err(MnpcaError::Parse(format!("row {} has {} values, expected {p2}", rows + 1, record.len())));
        }
        for field in record.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| MnpcaError::Parse(format!("row {}: {e}", rows + 1)))?);
        }
        rows += 1;
    }
    if rows != n * p1 {
        return Err(MnpcaError::Parse(format!("found {rows} rows, {} declares n * p1 = {}", side.display(), n * p1)));
    }
    let obs = values.chunks(p1 * p2).map(|c| DMatrix::from_row_slice(p1, p2, c)).collect();
    MatrixSample::new(obs)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label"])?;
    for l in labels {
        w.write_record([l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .records()
        .map(|r| {
            let r = r?;
            r.get(0)
                .unwrap_or("")
                .trim()
                .parse::<u32>()
                .map_err(|e| MnpcaError::Parse(format!("label: {e}")))
        })
        .collect()
}

pub fn write_latents<W: Write>(out: W, latents: &[LatentMatrix]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = latents.first() {
        let (d1, d2) = first.shape();
        let header: Vec<String> = (1..=d1).flat_map(|i| (1..=d2).map(move |j| format!("z_{i}_{j}"))).collect();
        w.write_record(&header)?;
    }
    for z in latents {
        w.write_record(z.to_row_major().into_iter().map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads latents written by [`write_latents`]; the header fixes `d1 x d2`.
pub fn read_latents<R: Read>(input: R) -> Result<Vec<LatentMatrix>> {
    let mut reader = csv::Reader::from_reader(input);
    let last = reader.headers()?.iter().next_back().map(str::to_string).unwrap_or_default();
    let dims: Vec<usize> = last.strip_prefix("z_").unwrap_or("").split('_').filter_map(|s| s.parse().ok()).collect();
    let [d1, d2] = dims[..] else {
        return Err(MnpcaError::Parse(format!("unexpected latent header field {last:?}")));
    };
    reader
        .records()
        .map(|r| {
            let vals = r?
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| MnpcaError::Parse(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != d1 * d2 {
                return Err(MnpcaError::Parse(format!("latent row has {} values, expected {}", vals.len(), d1 * d2)));
            }
            Ok(LatentMatrix(DMatrix::from_row_slice(d1, d2, &vals)))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MnpcaRepr {
    k1: KernelSpec,
    k2: KernelSpec,
    r: usize,
    m: usize,
    regularization: Regularization,
    tie_tol: f64,
    n: usize,
    shape: (usize, usize),
    left_basis: DenseArray,
    right_basis: DenseArray,
    k1_dag_sqrt: DenseArray,
    k2_dag_sqrt: DenseArray,
    f_bar: DenseArray,
    eigvals1: Vec<f64>,
    eigvals2: Vec<f64>,
    a: DenseArray,
    b: DenseArray,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoDRepr {
    a: DenseArray,
    b: DenseArray,
    mean: DenseArray,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct K2dRepr {
    kernel: BaseKernel,
    rows: DenseArray,
    alpha: DenseArray,
    eigenvalues: Vec<f64>,
    gram_col_means: Vec<f64>,
    gram_mean: f64,
    score_mean: DenseArray,
    column_reducer: DenseArray,
    p1: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum ModelRepr {
    #[serde(rename = "mnpca")]
    Mnpca(MnpcaRepr),
    #[serde(rename = "2d2pca")]
    TwoD2Pca(TwoDRepr),
    #[serde(rename = "k2dpca")]
    K2dpca(K2dRepr),
}

/// Any fitted model that can be stored.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Mnpca(Box<MnpcaModel>),
    TwoD2Pca(TwoDPcaModel),
    K2dpca(K2dpcaModel),
}

impl SavedModel {
    pub fn type_name(&self) -> &'static str {
        match self {
            SavedModel::Mnpca(_) => "mnpca",
            SavedModel::TwoD2Pca(_) => "2d2pca",
            SavedModel::K2dpca(_) => "k2dpca",
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        match self {
            SavedModel::Mnpca(m) => m.transform(x),
            SavedModel::TwoD2Pca(m) => m.transform(x),
            SavedModel::K2dpca(m) => m.transform(x),
        }
    }

    fn to_repr(&self) -> ModelRepr {
        match self {
            SavedModel::Mnpca(m) => {
                let p = m.clone().into_parts();
                ModelRepr::Mnpca(MnpcaRepr {
                    k1: p.k1,
                    k2: p.k2,
                    r: p.config.r,
                    m: p.config.m,
                    regularization: p.config.regularization,
                    tie_tol: p.config.tie_tol,
                    n: p.n,
                    shape: p.shape,
                    left_basis: columns_to_array(&p.left_basis),
                    right_basis: columns_to_array(&p.right_basis),
                    k1_dag_sqrt: (&p.k1_dag_sqrt).into(),
                    k2_dag_sqrt: (&p.k2_dag_sqrt).into(),
                    f_bar: (&p.f_bar).into(),
                    eigvals1: p.eigvals1.as_slice().to_vec(),
                    eigvals2: p.eigvals2.as_slice().to_vec(),
                    a: (&p.a).into(),
                    b: (&p.b).into(),
                })
            }
            SavedModel::TwoD2Pca(m) => {
                ModelRepr::TwoD2Pca(TwoDRepr { a: m.a().into(), b: m.b().into(), mean: m.mean().into() })
            }
            SavedModel::K2dpca(m) => ModelRepr::K2dpca(K2dRepr {
                kernel: m.kernel,
                rows: (&m.rows).into(),
                alpha: (&m.alpha).into(),
                eigenvalues: m.eigenvalues.as_slice().to_vec(),
                gram_col_means: m.gram_col_means.as_slice().to_vec(),
                gram_mean: m.gram_mean,
                score_mean: (&m.score_mean).into(),
                column_reducer: (&m.column_reducer).into(),
                p1: m.p1,
            }),
        }
    }

    fn from_repr(repr: ModelRepr) -> Result<Self> {
        Ok(match repr {
            ModelRepr::Mnpca(r) => SavedModel::Mnpca(Box::new(MnpcaModel::from_parts(ModelParts {
                k1: r.k1,
                k2: r.k2,
                config: FeatureConfig { r: r.r, m: r.m, regularization: r.regularization, tie_tol: r.tie_tol },
                n: r.n,
                shape: r.shape,
                left_basis: array_to_columns(r.left_basis)?,
                right_basis: array_to_columns(r.right_basis)?,
                k1_dag_sqrt: r.k1_dag_sqrt.try_into()?,
                k2_dag_sqrt: r.k2_dag_sqrt.try_into()?,
                f_bar: r.f_bar.try_into()?,
                eigvals1: finite_vec(r.eigvals1, "eigenvalues")?,
                eigvals2: finite_vec(r.eigvals2, "eigenvalues")?,
                a: r.a.try_into()?,
                b: r.b.try_into()?,
            })?)),
            ModelRepr::TwoD2Pca(r) => {
                SavedModel::TwoD2Pca(TwoDPcaModel::from_parts(r.a.try_into()?, r.b.try_into()?, r.mean.try_into()?)?)
            }
            ModelRepr::K2dpca(r) => {
                let m = K2dpcaModel {
                    kernel: r.kernel,
                    rows: r.rows.try_into()?,
                    alpha: r.alpha.try_into()?,
                    eigenvalues: finite_vec(r.eigenvalues, "eigenvalues")?,
                    gram_col_means: finite_vec(r.gram_col_means, "kernel means")?,
                    gram_mean: r.gram_mean,
                    score_mean: r.score_mean.try_into()?,
                    column_reducer: r.column_reducer.try_into()?,
                    p1: r.p1,
                };
                let n_rows = m.rows.nrows();
                let d1 = m.alpha.ncols();
                if m.alpha.nrows() != n_rows
                    || m.gram_col_means.len() != n_rows
                    || m.score_mean.shape() != (m.p1, d1)
                    || m.column_reducer.nrows() != m.p1
                {
                    return Err(MnpcaError::DimensionMismatch("stored k2dpca arrays disagree in shape".into()));
                }
                SavedModel::K2dpca(m)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_repr())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_repr(serde_json::from_str(text)?)
    }
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(model.to_json()?.as_bytes())?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    SavedModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_2d2pca, fit_k2dpca};
    use crate::eval::generate_checkerboard;
    use crate::exec::Execution;
    use crate::kernels::Parity;
    use crate::mnpca::{fit_transform, FitOptions};

    fn sample() -> MatrixSample {
        generate_checkerboard(12, 0.125, 9).unwrap().sample
    }

    #[test]
    fn dense_array_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = DenseArray::from(&m);
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"shape":[2,3],"data":[1.0,2.0,3.0,4.0,5.0,6.0]}"#);
        assert_eq!(DMatrix::try_from(a).unwrap(), m);
        assert!(DMatrix::try_from(DenseArray { shape: [2, 2], data: vec![1.0] }).is_err());
    }

    #[test]
    fn sample_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        let s = sample();
        write_matrix_sample(&path, &s).unwrap();
        assert_eq!(read_matrix_sample(&path).unwrap(), s);
        let labels = vec![1, 2, 2, 1];
        let lp = dir.path().join("sim.labels.csv");
        write_labels(&lp, &labels).unwrap();
        assert_eq!(read_labels(&lp).unwrap(), labels);

        std::fs::write(sidecar_path(&path), r#"{"n":13,"p1":10,"p2":10}"#).unwrap();
        assert!(matches!(read_matrix_sample(&path), Err(MnpcaError::Parse(_))));
    }

    #[test]
    fn models_round_trip_exactly() {
        let s = sample();
        let k = KernelSpec::gaussian(0.3, Parity::Odd).unwrap();
        let opts = FitOptions { dims: Some((2, 2)), ..FitOptions::default() };
        let (m, lat) = fit_transform(&s, k, k, &opts).unwrap();
        let models = [
            SavedModel::Mnpca(Box::new(m)),
            SavedModel::TwoD2Pca(fit_2d2pca(&s, 2, 2).unwrap()),
            SavedModel::K2dpca(fit_k2dpca(&s, BaseKernel::Gaussian { sigma2: 2.0 }, 2, 2, Execution::Sequential).unwrap()),
        ];
        for model in &models {
            let back = SavedModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back.type_name(), model.type_name());
            for x in s.observations() {
                assert_eq!(back.transform(x).unwrap(), model.transform(x).unwrap());
            }
        }
        assert_eq!(models[0].transform(s.get(3)).unwrap(), lat[3]);
        assert!(SavedModel::from_json(r#"{"type":"pca"}"#).is_err());
    }

    #[test]
    fn latents_round_trip() {
        let z = vec![
            LatentMatrix(DMatrix::from_row_slice(2, 2, &[0.1, -2.0, 1.0 / 3.0, 4e-20])),
            LatentMatrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])),
        ];
        let mut buf = Vec::new();
        write_latents(&mut buf, &z).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("z_1_1,z_1_2,z_2_1,z_2_2\n"));
        assert_eq!(read_latents(buf.as_slice()).unwrap(), z);
    }
}
