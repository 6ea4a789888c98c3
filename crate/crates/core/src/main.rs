use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dirac_ocp::config::{parse_spec, Model, ProblemSpec};
use dirac_ocp::control::{
    default_sosc_parameters, variational_inequality_margin, DiscreteProblem, KktDiagnostics, SoscReport,
};
use dirac_ocp::harness::{run_study, Quantity, StudyPlan};
use dirac_ocp::mesh::refine_times;
use dirac_ocp::state::NewtonReport;
use dirac_ocp::{Error, Result};

#[derive(Parser)]
#[command(name = "dirac-ocp", version, about = "Point-source optimal control of semilinear elliptic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state equation for the spec's fixed control.
    Solve(SingleLevel),
    /// Solve the discrete optimal control problem.
    Optimize(SingleLevel),
    /// Run a mesh-refinement study.
    Study(StudyArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "output")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Problem specification (TOML).
    spec: PathBuf,
}

#[derive(Args)]
struct SingleLevel {
    /// Number of uniform refinements of the domain mesh.
    #[arg(long, default_value_t = 5)]
    level: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct StudyArgs {
    /// Inclusive level range, e.g. `3..7`.
    #[arg(long, default_value = "3..7", value_parser = parse_levels)]
    levels: LevelRange,
    /// Reference level; defaults to the finest level plus two.
    #[arg(long)]
    reference: Option<usize>,
    /// Comma-separated quantities; defaults to all supported by the dimension.
    #[arg(long, value_delimiter = ',')]
    quantities: Vec<Quantity>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone)]
struct LevelRange(Vec<usize>);

fn parse_levels(s: &str) -> std::result::Result<LevelRange, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty level range {s:?}"));
    }
    Ok(LevelRange((a..=b).collect()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIRAC_OCP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Study(args) => cmd_study(args),
    }
}

fn load(common: &Common) -> Result<(ProblemSpec, Model)> {
    let spec = parse_spec(&common.spec)?;
    let base_dir = common.spec.parent().unwrap_or(Path::new("."));
    let model = spec.build(base_dir)?;
    // the global pool serves the per-source Hessian solves
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads.max(1))
        .build_global();
    Ok((spec, model))
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    std::fs::write(&path, text + "\n").map_err(io_error(&path))?;
    Ok(path)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    level: usize,
    h: f64,
    control: &'a [f64],
    cost: f64,
    newton: &'a NewtonReport,
}

fn cmd_solve(args: SingleLevel) -> Result<()> {
    let (_, model) = load(&args.common)?;
    let mesh = refine_times(&model.base_mesh, args.level);
    let dp = DiscreteProblem::new(Arc::clone(&model.problem), Arc::clone(&mesh))?;
    let (y, newton) = dp.state(&model.control, None)?;
    info!("state solved: {newton}");
    let out = &args.common.out;
    write_json(out, "state.json", &y.to_json())?;
    let summary = SolveOutput {
        level: args.level,
        h: mesh.h(),
        control: &model.control,
        cost: dp.cost_of_state(&y, &model.control),
        newton: &newton,
    };
    let path = write_json(out, "solve.json", &summary)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct OptimizeOutput<'a> {
    level: usize,
    h: f64,
    control: &'a [f64],
    cost: f64,
    iterations: usize,
    tol_kkt: f64,
    diagnostics: &'a KktDiagnostics,
    sosc: &'a SoscReport,
    /// Smallest `psi . (v - u) / |v - u|` over random feasible `v`.
    variational_inequality_margin: f64,
}

fn cmd_optimize(args: SingleLevel) -> Result<()> {
    let (spec, model) = load(&args.common)?;
    let mesh = refine_times(&model.base_mesh, args.level);
    let dp = DiscreteProblem::new(Arc::clone(&model.problem), Arc::clone(&mesh))?;
    let out = &args.common.out;
    std::fs::create_dir_all(out).map_err(io_error(out))?;
    let result = dp.solve_ocp(&model.control, None);
    let sol = match result {
        Ok(sol) => sol,
        Err(e) => {
            if let Error::OptimizerStalled { diagnostics, .. } = e.root() {
                write_json(out, "diagnostics.json", diagnostics)?;
            }
            return Err(e);
        }
    };
    let trace_path = out.join("trace.jsonl");
    let mut trace = BufWriter::new(File::create(&trace_path).map_err(io_error(&trace_path))?);
    for entry in &sol.trace {
        let line = serde_json::to_string(entry).expect("trace serializes");
        writeln!(trace, "{line}").map_err(io_error(&trace_path))?;
    }
    trace.flush().map_err(io_error(&trace_path))?;
    let (tau, kappa) = default_sosc_parameters(&model.problem);
    let sosc = dp.check_sosc(&sol.control, tau, kappa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let margin = variational_inequality_margin(&sol.control, &sol.diagnostics.psi, &model.problem.bounds, 100, &mut rng);
    write_json(out, "state.json", &sol.state.to_json())?;
    write_json(out, "adjoint.json", &sol.adjoint.to_json())?;
    let summary = OptimizeOutput {
        level: args.level,
        h: mesh.h(),
        control: &sol.control,
        cost: sol.cost,
        iterations: sol.trace.len() - 1,
        tol_kkt: model.problem.optimizer.tol_kkt,
        diagnostics: &sol.diagnostics,
        sosc: &sosc,
        variational_inequality_margin: margin,
    };
    let path = write_json(out, "optimize.json", &summary)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    let (_, model) = load(&args.common)?;
    let dim = model.base_mesh.dim();
    let quantities = if args.quantities.is_empty() {
        Quantity::ALL.into_iter().filter(|q| q.supports_dim(dim)).collect()
    } else {
        args.quantities
    };
    let mut plan = StudyPlan::new(
        Arc::clone(&model.problem),
        Arc::clone(&model.base_mesh),
        model.control.clone(),
        args.levels.0,
        quantities,
    );
    plan.subdomain = model.subdomain.clone();
    if let Some(r) = args.reference {
        plan.reference_level = r;
    }
    let report = run_study(&plan, args.common.threads)?;
    report.write(&args.common.out)?;
    for q in &report.quantities {
        match (q.rate, q.log_corrected_rate) {
            (Some(r), Some(c)) => println!(
                "{}: rate {:.3} (r2 {:.4}), log-corrected {:.3}",
                q.quantity, r.slope, r.r2, c.slope
            ),
            _ => println!("{}: too few positive errors for a fit", q.quantity),
        }
    }
    println!("{}", args.common.out.join("convergence.csv").display());
    Ok(())
}
