use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sparsesel::bnb::{self, BnbConfig, NodeBound, SearchOrder};
use sparsesel::bounds::{assemble_m, lower_bound_with, BoundConfig, BoundEngine};
use sparsesel::bruteforce::psi_exact;
use sparsesel::experiment::{run_experiment, ExperimentSpec};
use sparsesel::heuristics::{self, EnhancedConfig};
use sparsesel::instance::{self, GaborSpec, GaussianSpec};
use sparsesel::sdp::{self, SolverConfig};
use sparsesel::sparse_eig::{self, SymMatrix};
use sparsesel::subset_eval::{self, SupportSet};
use sparsesel::{Error, Instance};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Subset selection with certified lower bounds.
///
/// Exit codes: 0 success, 2 validation or usage error, 3 capacity cap or node budget
/// reached, 4 experiment completed only partially.
#[derive(Parser, Debug)]
#[command(name = "sparsesel", version)]
struct Cli {
    /// JSON object whose keys are long flag names of the subcommand (`{"k": 3,
    /// "engine": "sdp"}`). Flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "SPARSESEL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Branch-and-bound for the exact optimum.
    Solve(SolveArgs),
    /// Certified lower bound on the optimal residual.
    Bound(BoundArgs),
    /// Solve the sparse eigenvalue relaxation of a matrix.
    Relax(RelaxArgs),
    /// Run a heuristic for a feasible support.
    Heuristic(HeuristicArgs),
    /// Exhaustive enumeration of the optimum.
    Exact(ExactArgs),
    /// Sparse maximum eigenvalue of a matrix.
    Speig(SpeigArgs),
    /// Least-squares residual of a given support.
    Eval(EvalArgs),
    /// Generate an instance.
    Gen(GenArgs),
    /// Run an experiment described by a JSON spec and write CSV files.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Instance JSON file.
    #[arg(short, long, value_name = "FILE", conflicts_with_all = ["x_csv", "y_csv"])]
    input: Option<PathBuf>,
    /// Design matrix as CSV (one row per observation); requires --y-csv.
    #[arg(long, value_name = "FILE", requires = "y_csv")]
    x_csv: Option<PathBuf>,
    /// Response vector as CSV; requires --x-csv.
    #[arg(long, value_name = "FILE", requires = "x_csv")]
    y_csv: Option<PathBuf>,
}

impl InputArgs {
    fn load(&self) -> sparsesel::Result<Instance> {
        match (&self.input, &self.x_csv, &self.y_csv) {
            (Some(path), _, _) => instance::load_instance(path),
            (None, Some(x), Some(y)) => instance::load_csv(x, y),
            _ => Err(Error::Parameter("an instance is required: --input FILE or --x-csv/--y-csv".into())),
        }
    }
}

/// A symmetric matrix from `--matrix`, or `M(rho)` of an instance.
#[derive(Args, Debug)]
struct MatrixArgs {
    /// JSON array of rows of a symmetric matrix.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["input", "x_csv", "y_csv"])]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    instance: InputArgs,
    /// With an instance: use `bb' - rho X'X`. Defaults to `y'y` minus the forward greedy
    /// residual at --k.
    #[arg(long)]
    rho: Option<f64>,
}

impl MatrixArgs {
    fn load(&self, k: usize) -> sparsesel::Result<SymMatrix> {
        if let Some(path) = &self.matrix {
            let text = fs::read_to_string(path)?;
            let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
                .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })?;
            let p = rows.len();
            if rows.iter().any(|r| r.len() != p) {
                return Err(Error::Validation(format!("matrix in {} is not square", path.display())));
            }
            let m = nalgebra::DMatrix::from_fn(p, p, |i, j| rows[i][j]);
            return SymMatrix::new(m);
        }
        let inst = self.instance.load()?;
        let rho = match self.rho {
            Some(r) => r,
            None => inst.y_norm_sq() - heuristics::forward_greedy(&inst, k)?.best.objective,
        };
        assemble_m(&inst, rho)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum NodeEngineArg {
    None,
    Exact,
    Sdp,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EngineArg {
    Exact,
    Sdp,
}

impl From<EngineArg> for BoundEngine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Exact => BoundEngine::Exact,
            EngineArg::Sdp => BoundEngine::Sdp,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OrderArg {
    Dfs,
    BestFirst,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "sdp")]
    engine: NodeEngineArg,
    #[arg(long, value_enum, default_value = "dfs")]
    order: OrderArg,
    /// Maximum number of visited nodes.
    #[arg(long, default_value_t = 10_000_000)]
    budget: u64,
    /// Seed the incumbent with greedy and randomized heuristics at the root.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    seed_heuristics: bool,
    /// Greedily complete every n-th node for a new incumbent (0 = never).
    #[arg(long, default_value_t = 0)]
    heuristic_every: u64,
    /// Fathoming slack (default `1e-9 (1 + y'y)`).
    #[arg(long)]
    tol: Option<f64>,
    /// Write one JSON node event per line.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "sdp")]
    engine: EngineArg,
    /// Bisection tolerance on rho.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct RelaxArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = SolverConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iterations)]
    max_iters: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Forward,
    Backward,
    Gauss,
    Eig,
    Enhanced,
}

#[derive(Args, Debug)]
struct HeuristicArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "forward")]
    method: MethodArg,
    #[arg(long, default_value_t = heuristics::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    /// Refuse when more than this many supports would be evaluated.
    #[arg(long)]
    cap: Option<u128>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SpeigMethod {
    /// Largest eigenvalue, ignoring cardinality.
    Lmax,
    /// Enumeration of principal submatrices.
    Exact,
    /// Backward greedy elimination.
    Greedy,
}

#[derive(Args, Debug)]
struct SpeigArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "exact")]
    method: SpeigMethod,
    /// Enumeration cap for the exact method.
    #[arg(long)]
    cap: Option<u128>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated column indices.
    #[arg(long, value_delimiter = ',')]
    support: Vec<usize>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(subcommand)]
    family: GenFamily,
}

#[derive(Subcommand, Debug)]
enum GenFamily {
    /// Gaussian design with a planted sparse vector.
    Gaussian {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        /// Planted cardinality.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        coeff_scale: f64,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Gabor dictionary with an image patch as response.
    Gabor {
        #[arg(long, default_value_t = 4)]
        patch_size: usize,
        #[arg(long, default_value_t = 24)]
        atoms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Which sampled patch to use.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment spec, e.g. `{"experiment": "table1", "rows": [...]}`.
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match with_config(args) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let mut cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    cmd = cmd.mut_subcommand("gen", |g| g.mut_subcommands(|s| s.args_override_self(true)));
    let cli = match cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::Parameter(_) | Error::Validation(_) | Error::Parse { .. } => EXIT_VALIDATION,
        Error::Capacity(_) => EXIT_CAPACITY,
        Error::Io(_) => EXIT_FAILURE,
    })
}

/// Splices the flags from `--config FILE` in right after the subcommand name.
fn with_config(mut args: Vec<OsString>) -> sparsesel::Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(rest) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(rest));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })?;
    let flags = config_flags(&value).map_err(|m| Error::Parse { context: path.display().to_string(), message: m })?;

    let names: Vec<String> = Cli::command().get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(mut at) = args.iter().position(|a| names.iter().any(|n| a == n.as_str())) else {
        return Ok(args);
    };
    // `gen` takes a family name first
    if args[at] == "gen" && at + 1 < args.len() {
        at += 1;
    }
    args.splice(at + 1..at + 1, flags);
    Ok(args)
}

fn config_flags(value: &Value) -> Result<Vec<OsString>, String> {
    let obj = value.as_object().ok_or("config must be a JSON object")?;
    let mut out = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> Result<String, String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                Value::Bool(b) => Ok(b.to_string()),
                _ => Err(format!("unsupported value for {key}")),
            }
        };
        match v {
            Value::Null => {}
            Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",");
                out.push(flag.into());
                out.push(joined.into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

fn print_json<T: serde::Serialize>(value: &T) -> sparsesel::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(command: Command) -> sparsesel::Result<u8> {
    match command {
        Command::Solve(a) => solve(a),
        Command::Bound(a) => {
            let inst = a.input.load()?;
            let mut cfg = BoundConfig::new(a.engine.into());
            if let Some(t) = a.tol {
                cfg = cfg.with_tol_rho(t);
            }
            print_json(&lower_bound_with(&inst, a.k, &cfg)?)?;
            Ok(0)
        }
        Command::Relax(a) => {
            let m = a.matrix.load(a.k)?;
            let cfg = SolverConfig::default().with_epsilon(a.epsilon).with_max_iterations(a.max_iters);
            print_json(&sdp::sdp_k(&m, a.k, &cfg)?.summary())?;
            Ok(0)
        }
        Command::Heuristic(a) => heuristic(a),
        Command::Exact(a) => {
            let inst = a.input.load()?;
            print_json(&psi_exact(&inst, a.k, a.cap)?)?;
            Ok(0)
        }
        Command::Speig(a) => {
            let m = a.matrix.load(a.k)?;
            let out = match a.method {
                SpeigMethod::Lmax => {
                    let (value, vector) = sparse_eig::lambda_max(&m);
                    json!({ "value": value, "vector": vector.as_slice() })
                }
                SpeigMethod::Exact | SpeigMethod::Greedy => {
                    let r = match a.method {
                        SpeigMethod::Exact => sparse_eig::sparse_eig_exact(&m, a.k, a.cap)?,
                        _ => sparse_eig::backward_greedy_eig(&m, a.k)?,
                    };
                    json!({ "value": r.value, "support": r.support.indices(), "vector": r.vector.as_slice() })
                }
            };
            print_json(&out)?;
            Ok(0)
        }
        Command::Eval(a) => {
            let inst = a.input.load()?;
            let support = SupportSet::from_unsorted(a.support, inst.p())?;
            print_json(&subset_eval::evaluate(&inst, &support)?)?;
            Ok(0)
        }
        Command::Gen(a) => generate(a.family),
        Command::Experiment(a) => {
            let text = fs::read_to_string(&a.spec)?;
            let spec: ExperimentSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Parse { context: a.spec.display().to_string(), message: e.to_string() })?;
            let outcome = run_experiment(&spec, &a.out)?;
            print_json(&json!({
                "files": outcome.files,
                "skipped": outcome.skipped,
            }))?;
            Ok(if outcome.is_partial() { EXIT_PARTIAL } else { 0 })
        }
    }
}

fn solve(a: SolveArgs) -> sparsesel::Result<u8> {
    let inst = a.input.load()?;
    let mut cfg = BnbConfig::new(match a.engine {
        NodeEngineArg::None => NodeBound::None,
        NodeEngineArg::Exact => NodeBound::Exact,
        NodeEngineArg::Sdp => NodeBound::Sdp,
    });
    cfg.search_order = match a.order {
        OrderArg::Dfs => SearchOrder::Dfs,
        OrderArg::BestFirst => SearchOrder::BestFirst,
    };
    if a.budget == 0 {
        return Err(Error::Parameter("--budget must be at least 1".into()));
    }
    cfg.node_budget = a.budget;
    cfg.heuristic_at_root = a.seed_heuristics;
    cfg.heuristic_every_n_nodes = a.heuristic_every;
    cfg.tol = a.tol;
    let report = match &a.trace {
        Some(path) => {
            let (report, events) = bnb::solve_with_trace(&inst, a.k, &cfg)?;
            write_jsonl(path, &events)?;
            report
        }
        None => bnb::solve(&inst, a.k, &cfg)?,
    };
    print_json(&report)?;
    Ok(if report.optimality_proved { 0 } else { EXIT_CAPACITY })
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> sparsesel::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Validation(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn heuristic(a: HeuristicArgs) -> sparsesel::Result<u8> {
    let inst = a.input.load()?;
    let k = a.k;
    inst.check_k(k)?;
    match a.method {
        MethodArg::Forward => print_json(&heuristics::forward_greedy(&inst, k)?)?,
        MethodArg::Backward => print_json(&heuristics::backward_greedy(&inst, k)?)?,
        MethodArg::Gauss => {
            let z = heuristics::relaxation_covariance(&inst, k, &BoundConfig::new(BoundEngine::Sdp))?;
            print_json(&heuristics::gaussian_rounding(&inst, k, &z, a.samples, a.seed)?)?
        }
        MethodArg::Eig => {
            let rho = inst.y_norm_sq() - heuristics::forward_greedy(&inst, k)?.best.objective;
            let m = assemble_m(&inst, rho)?;
            let r = heuristics::eigenvector_rounding(&m, k, a.samples, a.seed)?;
            let fit = subset_eval::evaluate(&inst, &r.support)?;
            print_json(&json!({ "rounding": r, "fit": fit }))?
        }
        MethodArg::Enhanced => {
            let cfg = EnhancedConfig { num_samples: a.samples, seed: a.seed, ..EnhancedConfig::default() };
            print_json(&heuristics::enhanced_randomization(&inst, k, &cfg)?)?
        }
    }
    Ok(0)
}

fn generate(family: GenFamily) -> sparsesel::Result<u8> {
    match family {
        GenFamily::Gaussian { n, p, k, seed, noise, coeff_scale, output } => {
            let mut spec = GaussianSpec::new(n, p, k, seed).noise(noise);
            spec.coeff_scale = coeff_scale;
            let (inst, planted) = instance::generate_gaussian(&spec)?;
            instance::save_instance(&inst, &output)?;
            print_json(&json!({ "output": output, "n": n, "p": p, "planted_support": planted.indices() }))?;
        }
        GenFamily::Gabor { patch_size, atoms, seed, index, output } => {
            let spec = GaborSpec::standard(patch_size, atoms, seed);
            let insts = instance::gabor_instances(&spec, index + 1, seed)?;
            let inst = insts
                .into_iter()
                .nth(index)
                .ok_or_else(|| Error::Parameter(format!("could not sample patch {index}")))?;
            instance::save_instance(&inst, &output)?;
            print_json(&json!({ "output": output, "n": inst.n(), "p": inst.p() }))?;
        }
    }
    Ok(0)
}
