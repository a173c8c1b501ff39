use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unionro::bench::experiments::{
    runtime_scaling, scaling_to_csv, sweep_rho, sweep_to_csv, verify_problem_file,
};
use unionro::bench::file::{
    results_to_csv, results_to_json, shipped_problem_file, ProblemFile, ResultRecord, ShippedCase,
    SolverSettings,
};
use unionro::ccg_dro::{solve_dro, AmbiguitySet, MasterVariant};
use unionro::ccg_ro::{solve_enumerated, solve_monolithic, RoSolution};

#[derive(Parser)]
#[command(name = "unionro", version, about = "Two-stage robust optimization over unions of polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the robust problem in a problem file.
    SolveRo(SolveRoArgs),
    /// Solve the distributionally robust variant of a problem file.
    SolveDro(SolveDroArgs),
    /// Experiment drivers over the shipped benchmark cases.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Brute-force cross-checks.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run every applicable scheme on a shipped case and tabulate the results.
    Run(BenchRunArgs),
    /// Grow the climate horizon and compare the single-subproblem scheme
    /// against explicit enumeration.
    Scaling(ScalingArgs),
    /// Solve across a list of ambiguity radii and sample expected costs
    /// inside each ball.
    SweepRho(SweepRhoArgs),
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Re-derive a problem file's solutions through independent routes and
    /// report each check.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Table format written to stdout or --out.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Every tolerance defaults to the value stored in the problem file and can
/// be overridden field by field.
#[derive(Args)]
struct SolverOverrides {
    /// Convergence tolerance on the relative optimality gap.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Cap on complementarity multipliers in the worst-case subproblem.
    #[arg(long)]
    m_comp: Option<f64>,
    /// Selector big-M; derived from the subset vertices when absent.
    #[arg(long)]
    big_delta: Option<f64>,
    /// Factor between the two big-M validation solves.
    #[arg(long)]
    validation_factor: Option<f64>,
    /// Violation tolerance of the outer-approximation cuts.
    #[arg(long)]
    oa_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverOverrides {
    fn apply(&self, s: &mut SolverSettings) {
        if let Some(v) = self.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = self.max_iterations {
            s.max_iterations = v;
        }
        if let Some(v) = self.m_comp {
            s.m_comp = v;
        }
        if let Some(v) = self.big_delta {
            s.big_delta = Some(v);
        }
        if let Some(v) = self.validation_factor {
            s.validation_factor = v;
        }
        if let Some(v) = self.oa_tol {
            s.oa_tol = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
    }
}

#[derive(Args)]
struct SolveRoArgs {
    /// Problem file to solve.
    file: PathBuf,
    /// Enumerate every explicit subset combination instead of carrying the
    /// union through one selector-encoded subproblem.
    #[arg(long)]
    enumerated: bool,
    #[command(flatten)]
    overrides: SolverOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SolveDroArgs {
    /// Problem file to solve; must carry an ambiguity description unless
    /// --rho is given.
    file: PathBuf,
    /// Master formulation of the worst-case expectation.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Ambiguity radius, overriding the one in the file.
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    overrides: SolverOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Direct,
    Epigraph,
}

impl From<VariantArg> for MasterVariant {
    fn from(v: VariantArg) -> MasterVariant {
        match v {
            VariantArg::Direct => MasterVariant::Direct,
            VariantArg::Epigraph => MasterVariant::Epigraph,
        }
    }
}

#[derive(Args)]
struct BenchRunArgs {
    /// case2, cpnp or climate.
    case: String,
    /// Also write the instantiated problem file here.
    #[arg(long)]
    write_problem: Option<PathBuf>,
    #[command(flatten)]
    overrides: SolverOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, default_value_t = unionro::bench::cases::CLIMATE_SEED)]
    seed: u64,
    /// Interval subsets per step of the horizon.
    #[arg(long, default_value_t = 2)]
    subsets: usize,
    /// Horizons to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    horizons: Vec<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepRhoArgs {
    /// Problem file with an ambiguity description.
    file: PathBuf,
    /// Radii to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.5,1,5,50")]
    rhos: Vec<f64>,
    /// Random expected-cost samples per radius.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[command(flatten)]
    overrides: SolverOverrides,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Problem file to check.
    file: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::SolveRo(args) => solve_ro(args),
        Command::SolveDro(args) => solve_dro_cmd(args),
        Command::Bench(BenchCommand::Run(args)) => bench_run(args),
        Command::Bench(BenchCommand::Scaling(args)) => bench_scaling(args),
        Command::Bench(BenchCommand::SweepRho(args)) => bench_sweep(args),
        Command::Oracle(OracleCommand::Verify(args)) => oracle_verify(args),
    }
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<(), Box<dyn std::error::Error>> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_records(
    records: &[ResultRecord],
    output: &OutputArgs,
) -> Result<(), Box<dyn std::error::Error>> {
    let text = match output.format {
        Format::Csv => results_to_csv(records),
        Format::Json => results_to_json(records)?,
    };
    emit(&text, &output.out)
}

fn record_from_ro(scheme: &str, sol: &RoSolution, cpu_s: f64) -> ResultRecord {
    ResultRecord {
        scheme: scheme.into(),
        objective: sol.objective,
        first_stage: sol.first_stage.clone(),
        cpu_s,
        iterations: sol.trace.iterations.len(),
    }
}

fn solve_ro(args: SolveRoArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut pf = ProblemFile::load(&args.file)?;
    args.overrides.apply(&mut pf.solver);
    let pu = pf.uncertainty.product()?;
    let cfg = pf.solver.ccg_config();
    let t0 = Instant::now();
    let (scheme, sol) = if args.enumerated {
        ("ro-enumerated", solve_enumerated(&pf.problem, &pu, &cfg)?)
    } else {
        ("ro-monolithic", solve_monolithic(&pf.problem, &pu, &cfg)?)
    };
    let record = record_from_ro(scheme, &sol, t0.elapsed().as_secs_f64());
    emit_records(&[record], &args.output)
}

fn solve_dro_cmd(args: SolveDroArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut pf = ProblemFile::load(&args.file)?;
    args.overrides.apply(&mut pf.solver);
    if let Some(v) = args.variant {
        pf.solver.variant = v.into();
    }
    if pf.uncertainty.horizon != 1 {
        return Err(format!(
            "the distributionally robust path weighs the subsets of a single-stage union; \
             this file repeats its union over {} stages",
            pf.uncertainty.horizon
        )
        .into());
    }
    let union = pf.uncertainty.union()?;
    let ambiguity = match (&pf.ambiguity, args.rho) {
        (Some(spec), None) => spec.set()?,
        (Some(spec), Some(rho)) => AmbiguitySet::new(spec.nominal_probs.clone(), rho)?,
        (None, Some(rho)) => {
            let k = union.num_subsets();
            AmbiguitySet::new(vec![1.0 / k as f64; k], rho)?
        }
        (None, None) => {
            return Err("the file carries no ambiguity description; pass --rho to use a \
                        uniform nominal distribution"
                .into())
        }
    };
    let cfg = pf.solver.dro_config();
    let t0 = Instant::now();
    let sol = solve_dro(&pf.problem, &union, &ambiguity, &cfg)?;
    let record = ResultRecord {
        scheme: match sol.variant {
            MasterVariant::Direct => "dro-direct".into(),
            MasterVariant::Epigraph => "dro-epigraph".into(),
        },
        objective: sol.objective,
        first_stage: sol.first_stage.clone(),
        cpu_s: t0.elapsed().as_secs_f64(),
        iterations: sol.trace.iterations.len(),
    };
    emit_records(&[record], &args.output)
}

fn bench_run(args: BenchRunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let case = ShippedCase::parse(&args.case)?;
    let mut pf = shipped_problem_file(case)?;
    if let Some(path) = &args.write_problem {
        pf.save(path)?;
    }
    args.overrides.apply(&mut pf.solver);
    let pu = pf.uncertainty.product()?;
    let cfg = pf.solver.ccg_config();
    let mut records = Vec::new();

    let t0 = Instant::now();
    let mono = solve_monolithic(&pf.problem, &pu, &cfg)?;
    records.push(record_from_ro("ro-monolithic", &mono, t0.elapsed().as_secs_f64()));

    if pu.explicit_count().is_some_and(|n| n <= cfg.explosion_cap) {
        let t0 = Instant::now();
        let enumerated = solve_enumerated(&pf.problem, &pu, &cfg)?;
        records.push(record_from_ro("ro-enumerated", &enumerated, t0.elapsed().as_secs_f64()));
    }

    if let Some(spec) = &pf.ambiguity {
        let union = pf.uncertainty.union()?;
        let ambiguity = spec.set()?;
        for variant in [MasterVariant::Direct, MasterVariant::Epigraph] {
            let mut dro_cfg = pf.solver.dro_config();
            dro_cfg.variant = variant;
            let t0 = Instant::now();
            let sol = solve_dro(&pf.problem, &union, &ambiguity, &dro_cfg)?;
            records.push(ResultRecord {
                scheme: match variant {
                    MasterVariant::Direct => "dro-direct".into(),
                    MasterVariant::Epigraph => "dro-epigraph".into(),
                },
                objective: sol.objective,
                first_stage: sol.first_stage.clone(),
                cpu_s: t0.elapsed().as_secs_f64(),
                iterations: sol.trace.iterations.len(),
            });
        }
    }
    emit_records(&records, &args.output)
}

fn bench_scaling(args: ScalingArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = unionro::ccg_ro::CcgConfig::default();
    if let Some(eps) = args.epsilon {
        cfg.epsilon = eps;
    }
    let rows = runtime_scaling(args.seed, args.subsets, &args.horizons, &cfg)?;
    let text = match args.output.format {
        Format::Csv => scaling_to_csv(&rows),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            s
        }
    };
    emit(&text, &args.output.out)
}

fn bench_sweep(args: SweepRhoArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut pf = ProblemFile::load(&args.file)?;
    args.overrides.apply(&mut pf.solver);
    if let Some(v) = args.variant {
        pf.solver.variant = v.into();
    }
    if pf.uncertainty.horizon != 1 {
        return Err("rho sweeps need a single-stage union".into());
    }
    let union = pf.uncertainty.union()?;
    let nominal = match &pf.ambiguity {
        Some(spec) => spec.nominal_probs.clone(),
        None => return Err("the file carries no ambiguity description to sweep around".into()),
    };
    let cfg = pf.solver.dro_config();
    let rows = sweep_rho(
        &pf.problem,
        &union,
        &nominal,
        &args.rhos,
        args.samples,
        pf.solver.seed,
        &cfg,
    )?;
    let text = match args.output.format {
        Format::Csv => sweep_to_csv(&rows),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            s
        }
    };
    emit(&text, &args.output.out)
}

fn oracle_verify(args: VerifyArgs) -> Result<(), Box<dyn std::error::Error>> {
    let pf = ProblemFile::load(&args.file)?;
    let reports = verify_problem_file(&pf)?;
    let mut failed = 0usize;
    for r in &reports {
        let tag = if r.passed { "ok  " } else { "FAIL" };
        println!("{tag} {}: {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(format!("{failed} of {} checks failed", reports.len()).into());
    }
    Ok(())
}
