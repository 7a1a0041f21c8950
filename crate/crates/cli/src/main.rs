use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mnpca::baselines::{fit_2d2pca, fit_k2dpca};
use mnpca::eval::experiment::write_summary_csv;
use mnpca::eval::{generate_checkerboard, run_experiment, AccuracyTable, ExperimentConfig};
use mnpca::io::{
    fmt_f64, load_model, read_matrix_sample, save_model, write_labels, write_latents, write_matrix_sample,
    SavedModel,
};
use mnpca::kernels::{default_bandwidth, BaseKernel, KernelSpec, Parity};
use mnpca::mnpca::{fit_features, scree_select};
use mnpca::svd_features::{sample_svds, FeatureConfig, FeatureSet, DEFAULT_TIE_TOL};
use mnpca::{Execution, MnpcaError, Regularization};

#[derive(Parser)]
#[command(name = "mnpca", version, about = "Two-sided non-linear PCA for matrix-valued data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a checkerboard sample and write it with its labels.
    Simulate(SimulateArgs),
    /// Fit a model on a matrix sample.
    Fit(FitArgs),
    /// Map a matrix sample through a saved model.
    Transform(TransformArgs),
    /// Print the eigenvalues of a saved MNPCA model.
    Scree(ScreeArgs),
    /// Run a replicated bandwidth sweep and write the accuracy table.
    Benchmark(BenchmarkArgs),
    /// Mean and standard error of an accuracy table per method and exponent.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.125, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data CSV path; the sidecar and `<stem>.labels.csv` are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mnpca,
    #[value(name = "2d2pca")]
    TwoD2Pca,
    K2dpca,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelName {
    Linear,
    Gaussian,
    Polynomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParityArg {
    Odd,
    Even,
    LinearRaw,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Mnpca)]
    method: Method,
    #[arg(long, value_enum, default_value_t = KernelName::Gaussian)]
    kernel: KernelName,
    #[arg(long, value_enum, default_value_t = ParityArg::Odd)]
    parity: ParityArg,
    /// Gaussian bandwidth, used on both sides.
    #[arg(long, conflicts_with = "sigma2_auto")]
    sigma2: Option<f64>,
    /// Data-driven Gaussian bandwidth, computed separately for each side.
    #[arg(long)]
    sigma2_auto: bool,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f64,
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 0.2, conflicts_with = "pinv")]
    eps: f64,
    /// Invert the Gram matrices with the pseudo-inverse instead of the ridge.
    #[arg(long)]
    pinv: bool,
    #[arg(long, requires = "d2", conflicts_with = "scree")]
    d1: Option<usize>,
    #[arg(long, requires = "d1", conflicts_with = "scree")]
    d2: Option<usize>,
    /// Choose the latent dimensions with the scree rule.
    #[arg(long)]
    scree: bool,
    #[arg(long)]
    out_model: PathBuf,
    /// Also write the in-sample latents.
    #[arg(long)]
    out_latent: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Latent CSV path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ScreeArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Threads for replicate-level parallelism; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
    /// Accuracy CSV path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

/// Invalid flag combinations detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn execution(jobs: Option<usize>) -> Execution {
    if jobs == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn labels_path(data: &Path) -> PathBuf {
    data.with_extension("labels.csv")
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let s = generate_checkerboard(a.n, a.alpha, a.seed)?;
    write_matrix_sample(&a.out, &s.sample)?;
    write_labels(&labels_path(&a.out), &s.labels)?;
    Ok(())
}

fn base_kernel(a: &FitArgs, sigma2: Option<f64>) -> anyhow::Result<BaseKernel> {
    Ok(match a.kernel {
        KernelName::Linear => BaseKernel::Linear,
        KernelName::Polynomial => BaseKernel::Polynomial { degree: a.degree, offset: a.offset },
        KernelName::Gaussian => BaseKernel::Gaussian {
            sigma2: sigma2.ok_or_else(|| usage("the gaussian kernel needs --sigma2 or --sigma2-auto"))?,
        },
    })
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let exec = execution(a.jobs);
    let sample = read_matrix_sample(&a.data)?;
    let dims = a.d1.zip(a.d2);
    if dims.is_none() && !a.scree {
        return Err(usage("give --d1 and --d2, or --scree"));
    }

    let (model, latents) = match a.method {
        Method::Mnpca => {
            let parity = match a.parity {
                ParityArg::Odd => Parity::Odd,
                ParityArg::Even => Parity::Even,
                ParityArg::LinearRaw => Parity::LinearRaw,
            };
            let regularization = if a.pinv { Regularization::PseudoInverse } else { Regularization::Ridge { eps: a.eps } };
            let config = FeatureConfig { r: a.r, m: a.m, regularization, tie_tol: DEFAULT_TIE_TOL };
            let svds = sample_svds(&sample, a.r, DEFAULT_TIE_TOL, exec)?;
            let (s1, s2) = if a.sigma2_auto {
                if !matches!(a.kernel, KernelName::Gaussian) {
                    return Err(usage("--sigma2-auto applies to the gaussian kernel only"));
                }
                let left: Vec<_> = svds.iter().map(|s| s.left(0)).collect();
                let right: Vec<_> = svds.iter().map(|s| s.right(0)).collect();
                (Some(default_bandwidth(&left)?), Some(default_bandwidth(&right)?))
            } else {
                (a.sigma2, a.sigma2)
            };
            let k1 = KernelSpec::new(base_kernel(&a, s1)?, parity)?;
            let k2 = KernelSpec::new(base_kernel(&a, s2)?, parity)?;
            let fs = FeatureSet::from_svds(&svds, k1, k2, config, exec)?;
            let model = fit_features(&fs, dims)?;
            let latents = model.latents(&fs);
            (SavedModel::Mnpca(Box::new(model)), latents)
        }
        Method::TwoD2Pca => {
            let (d1, d2) = dims.ok_or_else(|| usage("--scree applies to mnpca only"))?;
            let model = fit_2d2pca(&sample, d1, d2)?;
            let latents = sample.observations().iter().map(|x| model.transform(x)).collect::<Result<Vec<_>, _>>()?;
            (SavedModel::TwoD2Pca(model), latents)
        }
        Method::K2dpca => {
            let (d1, d2) = dims.ok_or_else(|| usage("--scree applies to mnpca only"))?;
            let sigma2 = if a.sigma2_auto { Some(mnpca::baselines::kong_bandwidth(&sample)) } else { a.sigma2 };
            let model = fit_k2dpca(&sample, base_kernel(&a, sigma2)?, d1, d2, exec)?;
            let latents = sample.observations().iter().map(|x| model.transform(x)).collect::<Result<Vec<_>, _>>()?;
            (SavedModel::K2dpca(model), latents)
        }
    };
    save_model(&a.out_model, &model)?;
    if let Some(path) = &a.out_latent {
        let mut out = output(path)?;
        write_latents(&mut out, &latents)?;
        out.flush()?;
    }
    Ok(())
}

fn transform(a: TransformArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let sample = read_matrix_sample(&a.data)?;
    let latents = match &model {
        SavedModel::Mnpca(m) => m.transform_sample(&sample, execution(a.jobs))?,
        other => sample.observations().iter().map(|x| other.transform(x)).collect::<Result<Vec<_>, _>>()?,
    };
    let mut out = output(&a.out)?;
    write_latents(&mut out, &latents)?;
    out.flush()?;
    Ok(())
}

fn scree(a: ScreeArgs) -> anyhow::Result<()> {
    let SavedModel::Mnpca(model) = load_model(&a.model)? else {
        bail!(MnpcaError::InvalidParameter("scree needs an mnpca model".into()));
    };
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "side,index,eigenvalue")?;
    for row in model.eigen_report() {
        writeln!(out, "{},{},{}", row.side.as_str(), row.index, fmt_f64(row.eigenvalue))?;
    }
    out.flush()?;
    let d1 = scree_select(model.eigvals1().as_slice());
    let d2 = scree_select(model.eigvals2().as_slice());
    eprintln!("scree selection: d1 = {d1}, d2 = {d2}");
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(MnpcaError::from)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.replicates {
        config.replicates = v;
    }
    if let Some(v) = a.n_train {
        config.n_train = v;
    }
    if let Some(v) = a.n_test {
        config.n_test = v;
    }
    let exec = execution(a.jobs);
    let table = mnpca::exec::with_jobs(a.jobs, || run_experiment(&config, exec))?;
    let mut out = output(&a.out)?;
    table.write_csv(&mut out)?;
    out.flush()?;
    if table.redraws > 0 {
        eprintln!("redrew {} replicate sample(s) after degenerate SVDs", table.redraws);
    }
    Ok(())
}

fn summarize(a: SummarizeArgs) -> anyhow::Result<()> {
    let file = File::open(&a.input).with_context(|| format!("cannot open {}", a.input.display()))?;
    let table = AccuracyTable::read_csv(file)?;
    let mut out = output(&a.out)?;
    write_summary_csv(&table.summarize(), &mut out)?;
    out.flush()?;
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if e.downcast_ref::<UsageError>().is_some() {
        "usage"
    } else if let Some(m) = e.downcast_ref::<MnpcaError>() {
        m.kind()
    } else if e.downcast_ref::<io::Error>().is_some() {
        "io"
    } else {
        "runtime"
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Transform(a) => transform(a),
        Command::Scree(a) => scree(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = error_kind(&e);
            eprintln!("error[{kind}]: {e:#}");
            ExitCode::from(if kind == "usage" { 2 } else { 1 })
        }
    }
}
