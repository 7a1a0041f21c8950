//! Replicated bandwidth sweeps scored by QDA test accuracy.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_2d2pca, fit_k2dpca, kong_bandwidth};
use crate::error::{MnpcaError, Result};
use crate::eval::fashion::load_fashion_mnist_csv;
use crate::eval::generator::{generate_checkerboard, LabeledSample};
use crate::eval::qda::{qda_fit, DEFAULT_QDA_RIDGE};
use crate::exec::{try_map_indexed, Execution};
use crate::io::fmt_f64;
use crate::kernels::{default_bandwidth, BaseKernel, KernelSpec, Parity};
use crate::linalg::Regularization;
use crate::mnpca::{fit_features, LatentMatrix};
use crate::svd_features::{sample_svds, FeatureConfig, FeatureSet, DEFAULT_TIE_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Checkerboard { alpha: f64 },
    /// Train and test sets are drawn without replacement from the filtered file.
    FashionMnist { path: PathBuf, classes: Vec<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mnpca-odd")]
    MnpcaOdd,
    #[serde(rename = "mnpca-even")]
    MnpcaEven,
    #[serde(rename = "kong")]
    Kong,
    #[serde(rename = "2d2pca")]
    TwoD2Pca,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MnpcaOdd, Method::MnpcaEven, Method::Kong, Method::TwoD2Pca];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MnpcaOdd => "mnpca-odd",
            Method::MnpcaEven => "mnpca-even",
            Method::Kong => "kong",
            Method::TwoD2Pca => "2d2pca",
        }
    }

    /// Whether the method is swept over the bandwidth grid.
    pub fn uses_grid(self) -> bool {
        self != Method::TwoD2Pca
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = MnpcaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MnpcaError::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Exponents `a`; the bandwidth is `2^a` times the method's default.
    pub sigma_grid: Vec<f64>,
    pub dims: (usize, usize),
    pub r: usize,
    pub m: usize,
    pub eps: f64,
    pub seed: u64,
    pub qda_ridge: f64,
    /// Redraws allowed per replicate when an SVD is degenerate.
    pub max_redraws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Checkerboard { alpha: 0.125 },
            n_train: 100,
            n_test: 50,
            replicates: 50,
            methods: Method::ALL.to_vec(),
            sigma_grid: vec![-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0],
            dims: (2, 2),
            r: 2,
            m: 1,
            eps: 0.2,
            seed: 0,
            qda_ridge: DEFAULT_QDA_RIDGE,
            max_redraws: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MnpcaError::InvalidParameter(msg));
        if self.n_train < 4 || self.n_test < 1 || self.replicates < 1 {
            return bad(format!(
                "need n_train >= 4, n_test >= 1, replicates >= 1; got {}, {}, {}",
                self.n_train, self.n_test, self.replicates
            ));
        }
        if let Generator::Checkerboard { .. } = self.generator {
            if !self.n_train.is_multiple_of(2) || !self.n_test.is_multiple_of(2) {
                return bad("checkerboard sample sizes must be even".into());
            }
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.methods.iter().any(|m| m.uses_grid()) && self.sigma_grid.is_empty() {
            return bad("sigma_grid is empty".into());
        }
        if self.sigma_grid.iter().any(|a| !a.is_finite()) {
            return Err(MnpcaError::NonFinite("sigma_grid"));
        }
        if self.dims.0 == 0 || self.dims.1 == 0 {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) || !(self.qda_ridge.is_finite() && self.qda_ridge >= 0.0) {
            return bad("eps and qda_ridge must be non-negative".into());
        }
        Ok(())
    }

    fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            r: self.r,
            m: self.m,
            regularization: Regularization::Ridge { eps: self.eps },
            tie_tol: DEFAULT_TIE_TOL,
        }
    }

    /// Rows produced per replicate.
    pub fn rows_per_replicate(&self) -> usize {
        self.methods.iter().map(|m| if m.uses_grid() { self.sigma_grid.len() } else { 1 }).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub replicate: usize,
    pub method: Method,
    /// `None` for methods without a bandwidth.
    pub exponent: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
    /// Replicates redrawn because of a degenerate SVD.
    pub redraws: usize,
}

pub const ACCURACY_HEADER: [&str; 4] = ["replicate", "method", "exponent", "accuracy"];

impl AccuracyTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ACCURACY_HEADER)?;
        for row in &self.rows {
            w.write_record([
                row.replicate.to_string(),
                row.method.to_string(),
                row.exponent.map(fmt_f64).unwrap_or_default(),
                fmt_f64(row.accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        if reader.headers()?.iter().ne(ACCURACY_HEADER) {
            return Err(MnpcaError::Parse(format!("expected header {}", ACCURACY_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let num = |s: &str| s.parse::<f64>().map_err(|e| MnpcaError::Parse(format!("{e}: {s:?}")));
            let exponent = if record[2].is_empty() { None } else { Some(num(&record[2])?) };
            rows.push(AccuracyRow {
                replicate: record[0].parse().map_err(|e| MnpcaError::Parse(format!("replicate: {e}")))?,
                method: record[1].parse()?,
                exponent,
                accuracy: num(&record[3])?,
            });
        }
        Ok(Self { rows, redraws: 0 })
    }

    /// Mean and standard error of the accuracy per `(method, exponent)`, in
    /// order of first appearance.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(Method, Option<u64>)> = Vec::new();
        let mut groups: HashMap<(Method, Option<u64>), Vec<f64>> = HashMap::new();
        for row in &self.rows {
            let key = (row.method, row.exponent.map(f64::to_bits));
            groups
                .entry(key)
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(row.accuracy);
        }
        order
            .into_iter()
            .map(|key| {
                let acc = &groups[&key];
                let k = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / k;
                let std_error = if acc.len() > 1 {
                    (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
                } else {
                    0.0
                };
                SummaryRow { method: key.0, exponent: key.1.map(f64::from_bits), count: acc.len(), mean, std_error }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub exponent: Option<f64>,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "exponent", "count", "mean", "std_error"])?;
    for s in rows {
        w.write_record([
            s.method.to_string(),
            s.exponent.map(fmt_f64).unwrap_or_default(),
            s.count.to_string(),
            fmt_f64(s.mean),
            fmt_f64(s.std_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn accuracy(train: &[LatentMatrix], train_labels: &[u32], test: &[LatentMatrix], test_labels: &[u32], ridge: f64) -> Result<f64> {
    let feats: Vec<DVector<f64>> = train.iter().map(LatentMatrix::vectorize).collect();
    let model = qda_fit(&feats, train_labels, ridge)?;
    let mut hits = 0usize;
    for (z, &label) in test.iter().zip(test_labels) {
        if model.predict(&z.vectorize())? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_labels.len() as f64)
}

fn draw(config: &ExperimentConfig, pool: Option<&LabeledSample>, rng: &mut ChaCha8Rng) -> Result<(LabeledSample, LabeledSample)> {
    match (&config.generator, pool) {
        (Generator::Checkerboard { alpha }, _) => {
            let (s_train, s_test) = (rng.random::<u64>(), rng.random::<u64>());
            Ok((generate_checkerboard(config.n_train, *alpha, s_train)?, generate_checkerboard(config.n_test, *alpha, s_test)?))
        }
        (Generator::FashionMnist { .. }, Some(pool)) => {
            let total = config.n_train + config.n_test;
            if total > pool.len() {
                return Err(MnpcaError::InvalidParameter(format!(
                    "n_train + n_test = {total} exceeds the {} available images",
                    pool.len()
                )));
            }
            let idx = rand::seq::index::sample(rng, pool.len(), total).into_vec();
            Ok((pool.select(&idx[..config.n_train])?, pool.select(&idx[config.n_train..])?))
        }
        (Generator::FashionMnist { .. }, None) => unreachable!("pool is loaded for the fashion generator"),
    }
}

fn evaluate(config: &ExperimentConfig, replicate: usize, train: &LabeledSample, test: &LabeledSample) -> Result<Vec<AccuracyRow>> {
    let seq = Execution::Sequential;
    let ridge = config.qda_ridge;
    let (d1, d2) = config.dims;
    let mut rows = Vec::with_capacity(config.rows_per_replicate());
    let mnpca_svds = if config.methods.iter().any(|m| matches!(m, Method::MnpcaOdd | Method::MnpcaEven)) {
        let train_svds = sample_svds(&train.sample, config.r, DEFAULT_TIE_TOL, seq)?;
        let test_svds = sample_svds(&test.sample, config.r, DEFAULT_TIE_TOL, seq)?;
        let left: Vec<_> = train_svds.iter().map(|s| s.left(0)).collect();
        let right: Vec<_> = train_svds.iter().map(|s| s.right(0)).collect();
        let sigma0 = (default_bandwidth(&left)?, default_bandwidth(&right)?);
        Some((train_svds, test_svds, sigma0))
    } else {
        None
    };

    for &method in &config.methods {
        match method {
            Method::MnpcaOdd | Method::MnpcaEven => {
                let parity = if method == Method::MnpcaOdd { Parity::Odd } else { Parity::Even };
                let (train_svds, test_svds, (s1, s2)) = mnpca_svds.as_ref().expect("svds computed for MNPCA methods");
                for &a in &config.sigma_grid {
                    let scale = a.exp2();
                    let k1 = KernelSpec::gaussian(scale * s1, parity)?;
                    let k2 = KernelSpec::gaussian(scale * s2, parity)?;
                    let fs = FeatureSet::from_svds(train_svds, k1, k2, config.feature_config(), seq)?;
                    let model = fit_features(&fs, Some((d1, d2)))?;
                    let test_lat = test_svds.iter().map(|s| model.transform_svd(s)).collect::<Result<Vec<_>>>()?;
                    let acc = accuracy(&model.latents(&fs), &train.labels, &test_lat, &test.labels, ridge)?;
                    rows.push(AccuracyRow { replicate, method, exponent: Some(a), accuracy: acc });
                }
            }
            Method::Kong => {
                let sigma0 = kong_bandwidth(&train.sample);
                for &a in &config.sigma_grid {
                    let kernel = BaseKernel::Gaussian { sigma2: a.exp2() * sigma0 };
                    let model = fit_k2dpca(&train.sample, kernel, d1, d2, seq)?;
                    let lat = |s: &LabeledSample| {
                        s.sample.observations().iter().map(|x| model.transform(x)).collect::<Result<Vec<_>>>()
                    };
                    let acc = accuracy(&lat(train)?, &train.labels, &lat(test)?, &test.labels, ridge)?;
                    rows.push(AccuracyRow { replicate, method, exponent: Some(a), accuracy: acc });
                }
            }
            Method::TwoD2Pca => {
                let model = fit_2d2pca(&train.sample, d1, d2)?;
                let lat = |s: &LabeledSample| {
                    s.sample.observations().iter().map(|x| model.transform(x)).collect::<Result<Vec<_>>>()
                };
                let acc = accuracy(&lat(train)?, &train.labels, &lat(test)?, &test.labels, ridge)?;
                rows.push(AccuracyRow { replicate, method, exponent: None, accuracy: acc });
            }
        }
    }
    Ok(rows)
}

/// Random stream of one replicate attempt.
fn replicate_rng(seed: u64, replicate: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 16) | attempt as u64);
    rng
}

fn run_replicate(config: &ExperimentConfig, pool: Option<&LabeledSample>, replicate: usize) -> Result<(Vec<AccuracyRow>, usize)> {
    let mut attempt = 0;
    loop {
        let mut rng = replicate_rng(config.seed, replicate, attempt);
        let (train, test) = draw(config, pool, &mut rng)?;
        match evaluate(config, replicate, &train, &test) {
            Ok(rows) => return Ok((rows, attempt)),
            Err(e) if e.is_svd_degeneracy() && attempt < config.max_redraws => attempt += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Runs every replicate; rows are ordered by replicate, then method, then
/// exponent, independent of the execution schedule.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<AccuracyTable> {
    config.validate()?;
    let pool = match &config.generator {
        Generator::FashionMnist { path, classes } => Some(load_fashion_mnist_csv(path, classes)?),
        Generator::Checkerboard { .. } => None,
    };
    let results = try_map_indexed(exec, config.replicates, |rep| run_replicate(config, pool.as_ref(), rep))?;
    let mut table = AccuracyTable::default();
    for (rows, redraws) in results {
        table.rows.extend(rows);
        table.redraws += redraws;
    }
    Ok(table)
}
