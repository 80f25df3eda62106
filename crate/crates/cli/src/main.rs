use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdsk::bounds::{
    empirical_loss_upper_bound, empirical_loss_with_similarity, generalization_bound, rademacher_bound, BoundInputs,
};
use cdsk::cdsk_driver::{run_baseline_spectral, run_cdsk, tune_lambda, CdskConfig, DEFAULT_LAMBDA_GRID};
use cdsk::data_io::{load_csv, make_blobs, make_two_moons, write_csv, write_result, ClusteringResult, SampleMatrix};
use cdsk::kdc_ise::{decision_l2_norm, empirical_ise_terms, gaussian_convolution_check, ise_bound, KdeModel};
use cdsk::kernel::{default_bandwidth, gram, KernelSpec};
use cdsk::spectral_core::{eigh, psd_split};
use cdsk::{CdskError, SimplexWeights};

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 64;

// Report lines go to stdout; a closed pipe (e.g. `| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "cdsk", version, about = "Clustering by discriminative similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a CSV dataset.
    Cluster(ClusterArgs),
    /// Choose lambda by embedding entropy on a validation subset.
    Tune(TuneArgs),
    /// Plain spectral clustering on the Gaussian gram matrix.
    Baseline(BaselineArgs),
    /// Split a symmetric similarity matrix into PSD parts.
    Decompose(DecomposeArgs),
    /// Evaluate the generalization and Rademacher bounds.
    Bounds(BoundsArgs),
    /// Density-classification ISE diagnostics.
    Ise(IseArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Zero-based index of the ground-truth label column.
    #[arg(long)]
    labels: Option<usize>,
    /// Skip the first line of the CSV.
    #[arg(long)]
    header: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    clusters: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Pick lambda from the default grid before clustering.
    #[arg(long)]
    tune_lambda: bool,
    /// Independent runs with seeds `seed, seed+1, ...`; metrics are averaged.
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    then_cluster: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Square symmetric matrix as CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    c: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    b_plus: f64,
    #[arg(long, default_value_t = 0.0)]
    b_minus: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Empirical loss to add; computed from `--input` when omitted there.
    #[arg(long)]
    empirical: Option<f64>,
    /// Labeled data for the empirical loss of the uniform-weight kernel classifier.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Args)]
struct IseArgs {
    /// Compare quadrature against the closed form of a Gaussian convolution.
    #[arg(long)]
    check_convolution: bool,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    b: f64,
    #[arg(long)]
    h: Option<f64>,
    /// Binary labeled data for the empirical ISE terms with uniform weights.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Blobs,
    Moons,
}

#[derive(Args)]
struct SynthArgs {
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total sample count.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Blob standard deviation.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Distance between the two blob centers.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Moon noise level.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

enum Failure {
    Error(String),
    NotConverged,
}

impl From<CdskError> for Failure {
    fn from(e: CdskError) -> Self {
        Failure::Error(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load(input: &InputArgs) -> Result<SampleMatrix, CdskError> {
    load_csv(&input.input, input.labels, input.header)
}

fn config(model: &ModelArgs) -> CdskConfig {
    CdskConfig {
        lambda: model.lambda,
        bandwidth: model.bandwidth,
        max_iter: model.max_iter,
        seed: model.seed,
        ..CdskConfig::new(model.clusters)
    }
}

fn print_header(data: &SampleMatrix, cfg: &CdskConfig) {
    say!("samples: {}", data.n());
    say!("features: {}", data.d());
    say!("clusters: {}", cfg.c);
    say!("lambda: {}", cfg.lambda);
    match cfg.bandwidth {
        Some(h) => say!("bandwidth: {}", h),
        None => say!("bandwidth: heuristic"),
    }
    say!("max_iter: {}", cfg.max_iter);
    say!("seed: {}", cfg.seed);
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn print_metric(name: &str, values: &[f64]) {
    if values.len() == 1 {
        say!("{}: {:.3}", name, values[0]);
    } else if !values.is_empty() {
        let (m, s) = mean_std(values);
        say!("{}: {:.3} ± {:.3}", name, m, s);
    }
}

fn report_result(result: &ClusteringResult) {
    say!("bandwidth_used: {}", result.bandwidth_used);
    say!("iterations: {}", result.objective_trace.len());
    if let Some(last) = result.objective_trace.last() {
        say!("objective: {}", last);
    }
    say!("support: {}", result.alpha.iter().filter(|&&a| a > 0.0).count());
    say!("qp_converged: {}", result.qp_converged);
}

fn cluster_with(data: &SampleMatrix, cfg: &CdskConfig, runs: usize, output: Option<&PathBuf>) -> Outcome {
    let runs = runs.max(1);
    let mut results = Vec::with_capacity(runs);
    for r in 0..runs {
        let run_cfg = CdskConfig {
            seed: cfg.seed.wrapping_add(r as u64),
            ..cfg.clone()
        };
        results.push(run_cdsk(data, &run_cfg)?);
    }
    let first = &results[0];
    report_result(first);
    if runs > 1 {
        say!("runs: {}", runs);
    }
    let acc: Vec<f64> = results.iter().filter_map(|r| r.metrics.accuracy).collect();
    let nmi: Vec<f64> = results.iter().filter_map(|r| r.metrics.nmi).collect();
    print_metric("accuracy", &acc);
    print_metric("nmi", &nmi);
    if let Some(path) = output {
        write_result(first, path)?;
        say!("output: {}", path.display());
    }
    if results.iter().all(|r| r.qp_converged) {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn cmd_cluster(args: &ClusterArgs) -> Outcome {
    let data = load(&args.input)?;
    let mut cfg = config(&args.model);
    cfg.validate()?;
    if args.tune_lambda {
        let sel = tune_lambda(&data, &cfg, &DEFAULT_LAMBDA_GRID)?;
        cfg.lambda = sel.lambda;
    }
    print_header(&data, &cfg);
    cluster_with(&data, &cfg, args.runs, args.output.as_ref())
}

fn cmd_tune(args: &TuneArgs) -> Outcome {
    let data = load(&args.input)?;
    let mut cfg = config(&args.model);
    let grid = args.grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
    let sel = tune_lambda(&data, &cfg, &grid)?;
    say!("validation_size: {}", sel.validation_rows.len());
    for (l, e) in sel.grid.iter().zip(&sel.entropies) {
        say!("entropy[{}]: {:.6}", l, e);
    }
    say!("chosen_lambda: {}", sel.lambda);
    if args.then_cluster {
        cfg.lambda = sel.lambda;
        print_header(&data, &cfg);
        return cluster_with(&data, &cfg, 1, args.output.as_ref());
    }
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Outcome {
    let data = load(&args.input)?;
    let result = run_baseline_spectral(&data, args.clusters, args.bandwidth, args.seed)?;
    say!("samples: {}", data.n());
    say!("clusters: {}", args.clusters);
    say!("bandwidth_used: {}", result.bandwidth_used);
    if let Some(a) = result.metrics.accuracy {
        say!("accuracy: {:.3}", a);
    }
    if let Some(v) = result.metrics.nmi {
        say!("nmi: {:.3}", v);
    }
    if let Some(path) = &args.output {
        write_result(&result, path)?;
        say!("output: {}", path.display());
    }
    Ok(())
}

fn cmd_decompose(args: &DecomposeArgs) -> Outcome {
    let table = load_csv(&args.input, None, args.header)?;
    let s = table.data().clone();
    if s.nrows() != s.ncols() {
        return Err(Failure::Error(format!("matrix must be square, got {}x{}", s.nrows(), s.ncols())));
    }
    let split = psd_split(&s)?;
    let reconstruction = (&split.s_plus - &split.s_minus - &s).norm();
    say!("size: {}", s.nrows());
    say!("s_plus_frobenius: {:?}", split.s_plus.norm());
    say!("s_minus_frobenius: {:?}", split.s_minus.norm());
    say!("reconstruction_error: {:?}", reconstruction);
    say!("s_plus_min_eigenvalue: {:?}", eigh(&split.s_plus)?.eigenvalues.min());
    say!("s_minus_min_eigenvalue: {:?}", eigh(&split.s_minus)?.eigenvalues.min());
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs) -> Outcome {
    let mut n = args.n;
    let mut empirical = args.empirical;
    if let Some(path) = &args.input {
        let data = load_csv(path, args.labels, args.header)?;
        let labels = data
            .labels()
            .ok_or_else(|| Failure::Error("bounds on data need --labels".into()))?
            .to_vec();
        let h = match args.bandwidth {
            Some(h) => h,
            None => default_bandwidth(&data)?,
        };
        let k = gram(&data, &KernelSpec::new(h)?);
        let alpha = SimplexWeights::uniform(data.n());
        let c = data.n_classes().unwrap_or(0);
        let loss = empirical_loss_with_similarity(k.values(), &labels, c, &alpha, args.gamma)?;
        say!("empirical_loss: {:?}", loss);
        if args.gamma >= 1.0 {
            let ub = empirical_loss_upper_bound(&labels, &alpha, args.gamma, k.values())?;
            say!("empirical_loss_upper_bound: {:?}", ub);
        }
        n = n.or(Some(data.n()));
        empirical = empirical.or(Some(loss));
    }
    let n = n.ok_or_else(|| Failure::Error("--n or --input is required".into()))?;
    let inputs = BoundInputs::new(n, args.c, args.gamma, args.delta, args.b_plus, args.b_minus, args.r)?;
    let empirical = empirical.unwrap_or(0.0);
    say!("n: {}", n);
    say!("c: {}", args.c);
    say!("generalization_bound: {:?}", generalization_bound(&inputs, empirical));
    say!("rademacher_bound: {:?}", rademacher_bound(&inputs, args.delta)?);
    Ok(())
}

fn cmd_ise(args: &IseArgs) -> Outcome {
    if !args.check_convolution && args.input.is_none() {
        return Err(Failure::Error("ise needs --check-convolution or --input".into()));
    }
    if args.check_convolution {
        let h = args.h.unwrap_or(1.0);
        let (numeric, closed) = gaussian_convolution_check(args.a, args.b, h)?;
        say!("numeric: {:.9}", numeric);
        say!("closed: {:.9}", closed);
        say!("relative_error: {:.3e}", ((numeric - closed) / closed).abs());
    }
    if let Some(path) = &args.input {
        let data = load_csv(path, args.labels, args.header)?;
        let labels = data
            .labels()
            .ok_or_else(|| Failure::Error("ise on data needs --labels".into()))?
            .to_vec();
        let h = match args.h {
            Some(h) => h,
            None => default_bandwidth(&data)?,
        };
        let model = KdeModel::new(data.data().clone(), SimplexWeights::uniform(data.n()), labels, h)?;
        let terms = empirical_ise_terms(&model, args.lambda1);
        let bound = ise_bound(&model, args.eps)?;
        say!("h: {}", h);
        say!("hat_ise: {:?}", terms.hat_ise);
        say!("k_alpha: {:?}", terms.k_alpha);
        say!("decision_l2_norm: {:?}", decision_l2_norm(&model));
        say!("bound_rhs: {:?}", bound.rhs);
        say!("slack: {:?}", bound.slack);
        say!("confidence: {:?}", bound.confidence);
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Outcome {
    let data = match args.kind {
        SynthKind::Blobs => make_blobs(
            args.n / 2,
            &[vec![0.0, 0.0], vec![args.separation, 0.0]],
            args.sigma,
            args.seed,
        )?,
        SynthKind::Moons => make_two_moons(args.n, args.noise, args.seed)?,
    };
    write_csv(&data, &args.out)?;
    say!("samples: {}", data.n());
    say!("label_column: {}", data.d());
    say!("output: {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Cluster(a) => cmd_cluster(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Ise(a) => cmd_ise(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => {
            eprintln!("warning: an alpha subproblem hit its iteration budget; result written");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(EXIT_ERROR)
        }
    }
}
