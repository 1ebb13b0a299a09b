//! `sprec`: spectral precision estimation from the command line.
//!
//! Exit codes are stable: 0 success, 2 usage error, 3 data error, 4 numeric
//! error. Failures print one JSON object `{"code", "message", "context"}` to
//! stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use spectral_precision::dataset::{self, CsvOptions, DataMatrix, Orientation};
use spectral_precision::precision::{self, LowRankPrecision};
use spectral_precision::sparsify::{self, ThresholdMode};
use spectral_precision::spectral::{self, Method};
use spectral_precision::spiked::{self, ScenarioConfig};
use spectral_precision::{bench, persist, Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "sprec", version, about = "Spectral inverse covariance estimation for N >> T data")]
struct Cli {
    /// Worker threads for parallel sections (outputs do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a precision model to a data file.
    Fit(FitArgs),
    /// Average negative log-likelihood of a model on a data file.
    Eval(EvalArgs),
    /// Fit a whole ρ grid and report bounds and validation scores.
    Path(PathArgs),
    /// Threshold the eigenvector basis of a fitted model.
    Sparsify(SparsifyArgs),
    /// Linear-time screening of unimportant variables, plus the remaining edges.
    Screen(ScreenArgs),
    /// Run a spiked-covariance study from a scenario JSON file.
    Simulate(SimulateArgs),
    /// Time fits over a grid of sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input is one line per sample instead of one line per variable.
    #[arg(long)]
    samples_as_rows: bool,
    /// The first line is a header.
    #[arg(long)]
    header: bool,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Scale each variable to unit divide-by-T variance (per file).
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn options(&self) -> Result<CsvOptions, Failure> {
        if !self.delimiter.is_ascii() {
            return Err(Failure::usage("delimiter must be a single ASCII character"));
        }
        Ok(CsvOptions {
            delimiter: self.delimiter as u8,
            has_header: self.header,
            orientation: if self.samples_as_rows {
                Orientation::SamplesAsRows
            } else {
                Orientation::VariablesAsRows
            },
        })
    }

    /// Loads a file and applies centering or standardization.
    fn load(&self, path: &Path) -> Result<Prepared, Failure> {
        let raw = dataset::load_csv(path, &self.options()?).map_err(|e| Failure::lib(e).path(path))?;
        if self.standardize {
            let (data, constant) = raw.standardize();
            Ok(Prepared { data, constant })
        } else {
            Ok(Prepared {
                data: raw.into_centered(),
                constant: Vec::new(),
            })
        }
    }

    /// Loads a file for scoring. Standardization is per file; otherwise the
    /// raw values are returned so the model's own mean is used.
    fn load_for_scoring(&self, path: &Path) -> Result<DataMatrix, Failure> {
        let raw = dataset::load_csv(path, &self.options()?).map_err(|e| Failure::lib(e).path(path))?;
        Ok(if self.standardize { raw.standardize().0 } else { raw })
    }
}

struct Prepared {
    data: DataMatrix,
    constant: Vec<usize>,
}

#[derive(Debug, Args)]
struct RhoArgs {
    /// Regularization strength.
    #[arg(long, conflicts_with = "rho_grid")]
    rho: Option<f64>,
    /// Grid "lo:hi:log|lin:count"; requires --val for fit.
    #[arg(long)]
    rho_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Riccati)]
    method: MethodArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Riccati,
    Tikhonov,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Riccati => Method::Riccati,
            MethodArg::Tikhonov => Method::Tikhonov,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Soft,
    Hard,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Soft => ThresholdMode::Soft,
            ModeArg::Hard => ThresholdMode::Hard,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training data CSV.
    #[arg(long)]
    input: PathBuf,
    /// Validation data CSV used to select ρ from --rho-grid.
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    rho: RhoArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON destination.
    #[arg(long)]
    output: PathBuf,
    /// Fit report JSON destination (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test data CSV.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Scenario JSON whose ground truth supplies the entropy adjustment.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Repetition of the scenario whose ground truth is used.
    #[arg(long, default_value_t = 0, requires = "scenario")]
    repetition: usize,
    /// Metrics CSV destination (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PathArgs {
    #[arg(long)]
    input: PathBuf,
    /// Validation CSV; without it the score column is empty.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Grid "lo:hi:log|lin:count" (default 1e-3:1e1:log:20).
    #[arg(long)]
    rho_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Riccati)]
    method: MethodArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SparsifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Threshold scale λ; entries below λ/√(N·r) are removed.
    /// Defaults to the Riccati ρ implied by the model, 1/c².
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Soft)]
    mode: ModeArg,
    /// Sparse model JSON destination.
    #[arg(long)]
    output: PathBuf,
    /// Report JSON destination (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Coordinate-form sparse factor JSON destination.
    #[arg(long)]
    factor: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScreenArgs {
    #[arg(long)]
    model: PathBuf,
    /// Partial-correlation threshold ε.
    #[arg(long)]
    epsilon: f64,
    /// Upper limit on the number of reported edges.
    #[arg(long, default_value_t = 10_000)]
    max_edges: usize,
    /// Edge CSV destination (stdout if omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Unimportant-variable CSV destination.
    #[arg(long)]
    unimportant: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated variable counts.
    #[arg(long, default_value = "4096,8192,16384,32768")]
    sizes: String,
    /// Samples per fit.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Riccati)]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// A failure with its exit code and structured context.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
    context: serde_json::Map<String, serde_json::Value>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
            context: Default::default(),
        }
    }

    fn lib(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        };
        Failure {
            code,
            message: e.to_string(),
            context: Default::default(),
        }
    }

    fn io(e: io::Error, path: &Path) -> Self {
        Failure::lib(Error::Io(e)).path(path)
    }

    fn path(mut self, path: &Path) -> Self {
        self.context.insert("path".into(), json!(path.display().to_string()));
        self
    }

    fn emit(mut self, command: &str) -> ExitCode {
        self.context.insert("command".into(), json!(command));
        let body = json!({"code": self.code, "message": self.message, "context": self.context});
        eprintln!("{body}");
        ExitCode::from(self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::io(e, p))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CmdResult {
    let mut w = open_output(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::lib(Error::Json(e)))?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| Failure::lib(Error::Io(e)))
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn load_model(path: &Path) -> Result<LowRankPrecision, Failure> {
    persist::load_model(path).map_err(|e| Failure::lib(e).path(path))
}

fn resolve_grid(spec: Option<&str>) -> Result<Vec<f64>, Failure> {
    Ok(match spec {
        Some(s) => spectral::parse_rho_grid(s)?,
        None => spectral::default_rho_grid(),
    })
}

#[derive(Debug, Serialize)]
struct FitReport {
    method: Method,
    rho: f64,
    n_vars: usize,
    n_samples: usize,
    rank: usize,
    alpha: f64,
    beta: f64,
    standardized: bool,
    /// Variables with zero variance, left unscaled.
    constant_variables: Vec<usize>,
    wall_time_ms: f64,
    peak_memory_bytes_estimate: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationReport>,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    selected_index: usize,
    rhos: Vec<f64>,
    scores: Vec<f64>,
}

fn cmd_fit(args: &FitArgs) -> CmdResult {
    let start = Instant::now();
    let method: Method = args.rho.method.into();
    let Prepared { data, constant } = args.data.load(&args.input)?;
    let (n, t) = (data.n_vars(), data.n_samples());
    let basis = spectral::thin_svd_owned(data)?;
    if basis.rank() == 0 {
        warn("training data have zero variance; the fit is isotropic (rank 0)");
    }

    let (model, rho, validation) = match (&args.rho.rho, &args.rho.rho_grid, &args.val) {
        (Some(rho), _, _) => {
            if args.val.is_some() {
                warn("--val is ignored when --rho is given");
            }
            (spectral::fit(&basis, *rho, method)?, *rho, None)
        }
        (None, Some(grid), Some(val_path)) => {
            let grid = spectral::parse_rho_grid(grid)?;
            let val = args.data.load_for_scoring(val_path)?;
            let path = spectral::solution_path(&basis, &grid, method)?;
            let chosen = spectral::select_rho_by_validation(&path, &val).map_err(|e| Failure::lib(e).path(val_path))?;
            let report = ValidationReport {
                selected_index: chosen.best_index,
                rhos: chosen.scores.iter().map(|s| s.0).collect(),
                scores: chosen.scores.iter().map(|s| s.1).collect(),
            };
            (path.model(chosen.best_index), chosen.best_rho, Some(report))
        }
        (None, Some(_), None) => return Err(Failure::usage("--rho-grid requires --val")),
        (None, None, _) => return Err(Failure::usage("one of --rho or --rho-grid with --val is required")),
    };

    let bounds = model.bounds().expect("fitted models carry bounds");
    persist::save_model(&args.output, &model).map_err(|e| Failure::lib(e).path(&args.output))?;
    let report = FitReport {
        method,
        rho,
        n_vars: n,
        n_samples: t,
        rank: model.rank(),
        alpha: bounds.alpha,
        beta: bounds.beta,
        standardized: args.data.standardize,
        constant_variables: constant,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        peak_memory_bytes_estimate: bench::peak_bytes_estimate(n, t, model.rank()),
        validation,
    };
    write_json(args.report.as_deref(), &report)
}

fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let test = args.data.load_for_scoring(&args.input)?;
    let nll = -model
        .average_log_likelihood(test.values())
        .map_err(|e| Failure::lib(e).path(&args.input))?;

    let excess = match &args.scenario {
        Some(path) => {
            let config = read_scenario(path)?;
            if args.repetition >= config.repetitions {
                return Err(Failure::usage(format!(
                    "repetition {} is outside the scenario's {} repetitions",
                    args.repetition, config.repetitions
                )));
            }
            let [s_model, _, _] = spiked::repetition_seeds(config.root_seed, args.repetition);
            let truth = spiked::random_spiked(config.n, config.k, config.beta, config.density, s_model)?;
            let entropy = spiked::true_covariance(&truth).expected_negative_log_likelihood();
            Some(nll - entropy)
        }
        None => None,
    };

    let mut w = open_output(args.output.as_deref())?;
    let io_err = |e: io::Error| Failure::lib(Error::Io(e));
    writeln!(w, "n_samples,avg_nll,excess_nll").map_err(io_err)?;
    let excess = excess.map(dataset::format_f64).unwrap_or_default();
    writeln!(w, "{},{},{excess}", test.n_samples(), dataset::format_f64(nll)).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(e, path))?;
    let config: ScenarioConfig =
        serde_json::from_reader(io::BufReader::new(file)).map_err(|e| Failure::lib(Error::Json(e)).path(path))?;
    config.validate().map_err(|e| Failure::lib(e).path(path))?;
    Ok(config)
}

fn cmd_path(args: &PathArgs) -> CmdResult {
    let method: Method = args.method.into();
    let grid = resolve_grid(args.rho_grid.as_deref())?;
    let Prepared { data, .. } = args.data.load(&args.input)?;
    let basis = spectral::thin_svd_owned(data)?;
    let path = spectral::solution_path(&basis, &grid, method)?;
    let scores = match &args.val {
        Some(p) => {
            let val = args.data.load_for_scoring(p)?;
            Some(spectral::select_rho_by_validation(&path, &val).map_err(|e| Failure::lib(e).path(p))?)
        }
        None => None,
    };

    let mut w = open_output(args.output.as_deref())?;
    let io_err = |e: io::Error| Failure::lib(Error::Io(e));
    writeln!(w, "rho,alpha,beta,score").map_err(io_err)?;
    for i in 0..path.len() {
        let b = path.bounds(i);
        let score = scores
            .as_ref()
            .map(|s| dataset::format_f64(s.scores[i].1))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{score}",
            dataset::format_f64(path.entries()[i].rho),
            dataset::format_f64(b.alpha),
            dataset::format_f64(b.beta)
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn cmd_sparsify(args: &SparsifyArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let lambda = args.lambda.unwrap_or_else(|| 1.0 / (model.c() * model.c()));
    let (sparse, factor, report) = sparsify::sparsify_model(&model, lambda, args.mode.into())?;
    persist::save_model(&args.output, &sparse).map_err(|e| Failure::lib(e).path(&args.output))?;
    if let Some(p) = &args.factor {
        write_json(Some(p), &factor)?;
    }
    write_json(args.report.as_deref(), &report)
}

fn cmd_screen(args: &ScreenArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let screening = model.screen_unimportant(args.epsilon)?;
    let edges = model.important_edges(args.epsilon, args.max_edges)?;
    if let Some(p) = &args.unimportant {
        let mut w = open_output(Some(p))?;
        let io_err = |e: io::Error| Failure::io(e, p);
        writeln!(w, "variable,q").map_err(io_err)?;
        for &i in &screening.unimportant {
            writeln!(w, "{i},{}", dataset::format_f64(screening.q[i])).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    let w = open_output(args.output.as_deref())?;
    precision::write_edges_csv(w, &edges, None)?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let config = read_scenario(&args.config)?;
    let rows = spiked::run_scenario(&config)?;
    spiked::write_scenario_csv(open_output(args.output.as_deref())?, &rows)?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CmdResult {
    if args.samples < 2 {
        return Err(Failure::usage("--samples must be at least 2"));
    }
    let sizes: Vec<(usize, usize)> = bench::parse_sizes(&args.sizes)?
        .into_iter()
        .map(|n| (n, args.samples))
        .collect();
    let rows = bench::run_bench(&sizes, args.repeats, args.rho, args.method.into(), args.seed)?;
    bench::write_bench_csv(open_output(args.output.as_deref())?, &rows)?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit(_) => "fit",
        Command::Eval(_) => "eval",
        Command::Path(_) => "path",
        Command::Sparsify(_) => "sparsify",
        Command::Screen(_) => "screen",
        Command::Simulate(_) => "simulate",
        Command::Bench(_) => "bench",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return Failure::usage(e.render().to_string().trim_end()).emit("");
        }
    };
    let name = command_name(&cli.command);

    if cli.threads == 0 {
        return Failure::usage("--threads must be at least 1").emit(name);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return Failure::usage(format!("could not start thread pool: {e}")).emit(name);
    }

    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Path(a) => cmd_path(a),
        Command::Sparsify(a) => cmd_sparsify(a),
        Command::Screen(a) => cmd_screen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.emit(name),
    }
}
