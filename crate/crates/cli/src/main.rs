//! `rtmpc`: run closed-loop simulations, convergence checks and timing
//! benchmarks on the registered benchmark problems.
//!
//! Exit codes: 0 success, 1 solver or convergence failure, 2 invalid input.

mod bench;

use clap::{Args, Parser, Subcommand};
use rtmpc::benchmarks::{with_benchmark, Benchmark, BenchmarkKind, BenchmarkVisitor, ProblemConfig};
use rtmpc::config::{RunSpec, SpecError};
use rtmpc::sim::{run_closed_loop, SimError, SimLog};
use rtmpc::sqp::{SolveStatus, Solver};
use rtmpc::OcpModel;
use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rtmpc", version, about = "Real-time NMPC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-loop simulation; writes sim.csv, timings.csv, solver.csv and summary.json
    Run(SpecArgs),
    /// Solve the open-loop problem from a cold start and print the KKT residuals
    Check(SpecArgs),
    /// Repeat closed-loop runs and report per-phase wall times as CSV
    Bench(BenchArgs),
    /// Print the registered benchmarks
    ListBenchmarks,
}

#[derive(Args, Debug, Clone, Default)]
struct SpecArgs {
    /// TOML run specification; flags below override its keys
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    /// converge | rti
    #[arg(long)]
    mode: Option<String>,
    /// erk4 | irk-gl2 | irk-gl3
    #[arg(long)]
    integrator: Option<String>,
    /// integrator steps per shooting interval
    #[arg(long)]
    steps: Option<usize>,
    /// none | full
    #[arg(long)]
    condensing: Option<String>,
    /// dense | sparse (implies the matching condensing mode unless given)
    #[arg(long)]
    qp_path: Option<String>,
    /// enable curvature-based sensitivity updating
    #[arg(long)]
    cmon: bool,
    #[arg(long)]
    eta_pri: Option<f64>,
    #[arg(long)]
    eta_dual: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// closed-loop duration in seconds
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// evaluate shooting intervals in parallel
    #[arg(long)]
    parallel: bool,
    /// worker threads for parallel evaluation (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// arbitrary override, e.g. `--set sim.noise_std=0.01`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// one row per value, e.g. `--sweep qp.path=dense,sparse`; several
    /// sweeps form a cartesian product
    #[arg(long, value_name = "KEY=V1,V2,..")]
    sweep: Vec<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Input(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 1,
        }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Input(e.to_string()),
            SimError::Solver(rtmpc::sqp::SqpError::Config(_)) => Failure::Input(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
        Command::ListBenchmarks => cmd_list(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Solver(m) => eprintln!("failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn split_pair(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::Input(format!("expected KEY=VALUE, got `{s}`")))
}

/// Adds the condensing mode that `qp.path` requires when it was not set
/// explicitly, so that `qp.path=sparse` alone is a valid override.
fn couple_qp_path(pairs: &mut Vec<(String, String)>) {
    let has_condensing = pairs.iter().any(|(k, _)| k == "condensing.mode");
    if has_condensing {
        return;
    }
    let implied = pairs.iter().rev().find(|(k, _)| k == "qp.path").and_then(|(_, v)| match v.as_str() {
        "dense" => Some("full"),
        "sparse" => Some("none"),
        _ => None,
    });
    if let Some(mode) = implied {
        pairs.push(("condensing.mode".into(), mode.into()));
    }
}

impl SpecArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Failure> {
        let mut p: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| p.push((k.to_string(), v));
        if let Some(v) = &self.benchmark {
            put("benchmark", v.clone());
        }
        if let Some(v) = &self.mode {
            put("sqp.mode", v.clone());
        }
        if let Some(v) = &self.integrator {
            put("integrator.scheme", v.clone());
        }
        if let Some(v) = self.steps {
            put("integrator.steps", v.to_string());
        }
        if let Some(v) = &self.condensing {
            put("condensing.mode", v.clone());
        }
        if let Some(v) = &self.qp_path {
            put("qp.path", v.clone());
        }
        if self.cmon {
            put("cmon.enabled", "true".into());
        }
        if let Some(v) = self.eta_pri {
            put("cmon.eta_pri", format!("{v:?}"));
        }
        if let Some(v) = self.eta_dual {
            put("cmon.eta_dual", format!("{v:?}"));
        }
        if let Some(v) = self.max_iters {
            put("sqp.max_iters", v.to_string());
        }
        if let Some(v) = self.kkt_tol {
            put("sqp.kkt_tol", format!("{v:?}"));
        }
        if let Some(v) = self.seed {
            put("seed", v.to_string());
        }
        if let Some(v) = self.t_end {
            put("sim.t_end", format!("{v:?}"));
        }
        if let Some(v) = self.horizon {
            put("problem.horizon", v.to_string());
        }
        if self.parallel {
            put("parallel", "true".into());
        }
        if let Some(v) = &self.out {
            put("output_dir", v.display().to_string());
        }
        for s in &self.set {
            let (k, v) = split_pair(s)?;
            p.push((k.to_string(), v.to_string()));
        }
        Ok(p)
    }

    /// Spec file (or benchmark defaults) with all overrides applied.
    fn resolve(&self, extra: &[(String, String)]) -> Result<RunSpec, Failure> {
        let mut spec = match (&self.spec, &self.benchmark) {
            (Some(path), _) => RunSpec::load(path)?,
            (None, Some(name)) => RunSpec::new(parse_benchmark(name)?),
            (None, None) => return Err(Failure::Input("either --spec or --benchmark is required".into())),
        };
        let mut pairs = self.overrides()?;
        pairs.extend(extra.iter().cloned());
        couple_qp_path(&mut pairs);
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        spec.set_all(&refs)?;
        Ok(spec)
    }

    fn init_threads(&self) -> Result<(), Failure> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Failure::Input("--threads must be >= 1".into()));
            }
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }
}

fn parse_benchmark(name: &str) -> Result<BenchmarkKind, Failure> {
    BenchmarkKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = BenchmarkKind::ALL.iter().map(|k| k.name()).collect();
        Failure::Input(format!("unknown benchmark `{name}` (known: {})", known.join(", ")))
    })
}

fn visit<V: BenchmarkVisitor>(spec: &RunSpec, v: V) -> Result<V::Output, Failure> {
    with_benchmark(spec.benchmark, &spec.problem, v).map_err(|e| Failure::Input(e.to_string()))
}

/// Closed-loop run of the benchmark selected by a spec.
pub(crate) struct ClosedLoop<'a>(pub &'a RunSpec);

impl BenchmarkVisitor for ClosedLoop<'_> {
    type Output = Result<SimLog, SimError>;
    fn visit<M: OcpModel + Clone + Debug + 'static>(self, b: Benchmark<M>) -> Self::Output {
        let spec = self.0;
        run_closed_loop(
            &b.problem,
            None,
            &spec.solver_options(),
            &spec.sim_config(b.t_end),
            &b.cold_start(),
            &b.x_init,
            &b.references,
        )
    }
}

fn output_dir(spec: &RunSpec) -> PathBuf {
    spec.output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("out").join(spec.benchmark.name()))
}

fn cmd_run(args: &SpecArgs) -> Result<(), Failure> {
    let spec = args.resolve(&[])?;
    args.init_threads()?;
    let log = visit(&spec, ClosedLoop(&spec))??;
    let dir = output_dir(&spec);
    log.write_all(&dir)?;
    std::fs::write(dir.join("spec.toml"), spec.to_toml()?).map_err(|e| Failure::Solver(e.to_string()))?;
    let s = log.summary();
    println!(
        "{}: {} samples, {} failed, solve time mean {:.3} ms max {:.3} ms, final KKT {:.3e}",
        spec.benchmark.name(),
        s.samples,
        s.failures,
        1e3 * s.solve_time.mean,
        1e3 * s.solve_time.max,
        s.final_kkt
    );
    println!("wrote {}", dir.display());
    if s.failures > 0 {
        return Err(Failure::Solver(format!("{} of {} samples failed", s.failures, s.samples)));
    }
    Ok(())
}

struct OpenLoop<'a>(&'a RunSpec);

impl BenchmarkVisitor for OpenLoop<'_> {
    type Output = Result<rtmpc::sqp::SolveReport, rtmpc::sqp::SqpError>;
    fn visit<M: OcpModel + Clone + Debug + 'static>(self, b: Benchmark<M>) -> Self::Output {
        let mut solver = Solver::new(self.0.solver_options())?;
        solver.solve(&b.problem, &b.cold_start(), &b.x_init).map(|(_, r)| r)
    }
}

fn cmd_check(args: &SpecArgs) -> Result<(), Failure> {
    let spec = args.resolve(&[])?;
    args.init_threads()?;
    let report = visit(&spec, OpenLoop(&spec))?.map_err(|e| match e {
        rtmpc::sqp::SqpError::Config(m) => Failure::Input(m),
        e => Failure::Solver(e.to_string()),
    })?;
    let k = report.kkt;
    println!("benchmark      {}", spec.benchmark.name());
    println!("status         {:?}", report.status);
    println!("iterations     {}", report.iters);
    println!("stationarity   {:.3e}", k.stationarity);
    println!("equality       {:.3e}", k.eq_violation);
    println!("inequality     {:.3e}", k.ineq_violation);
    let tol = spec.sqp.kkt_tol;
    if report.status == SolveStatus::Converged && k.max() <= tol {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "KKT residual {:.3e} above tolerance {tol:.1e} after {} iterations",
            k.max(),
            report.iters
        )))
    }
}

struct Describe;

impl BenchmarkVisitor for Describe {
    type Output = (usize, usize, usize, f64);
    fn visit<M: OcpModel + Clone + Debug + 'static>(self, b: Benchmark<M>) -> Self::Output {
        let d = b.problem.dims;
        (d.nx, d.nu, d.n, d.ts)
    }
}

fn cmd_list() -> Result<(), Failure> {
    println!("{:<16} {:>4} {:>4} {:>4} {:>6}  description", "name", "nx", "nu", "N", "Ts");
    for kind in BenchmarkKind::ALL {
        let (nx, nu, n, ts) =
            with_benchmark(kind, &ProblemConfig::default(), Describe).map_err(|e| Failure::Input(e.to_string()))?;
        println!("{:<16} {nx:>4} {nu:>4} {n:>4} {ts:>6}  {}", kind.name(), kind.description());
    }
    Ok(())
}
