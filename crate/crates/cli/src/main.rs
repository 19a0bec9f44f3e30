use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use coflowsched::instance::{self, CoflowInstance, GeneratorParams, InstanceError};
use coflowsched::lp::{self, LpAudit, LpError, ObjectiveKind, SolutionRecord, SolvedLp};
use coflowsched::oracle::{
    self, brute_force_opt, default_quantum, Aggregate, RatioReport, RatioRow,
};
use coflowsched::pipeline::{
    self, batch_instance, Arithmetic, Artifact, BatchParams, PipelineError, RunConfig,
};
use coflowsched::rational::{self, Rational};
use coflowsched::rounding::{self, Assignment, AssignmentRecord, RoundingError, RoundingMode};
use coflowsched::simulator::{
    self, busy_window_gaps, list_schedule, validate_schedule, Schedule, SimError,
};
use coflowsched::timegrid::build_grid;

const AUDIT_TOL: f64 = 1e-7;
const ESTIMATOR_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "coflowsched",
    version,
    about = "Coflow scheduling on heterogeneous parallel network cores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random instance.
    Gen(GenArgs),
    /// Build and solve the interval-indexed LP relaxation.
    Lp(LpArgs),
    /// Round an LP solution to one (core, interval) per flow.
    Schedule(ScheduleArgs),
    /// Execute an assignment with the list scheduler.
    Simulate(SimulateArgs),
    /// Check instance, solution, assignment and schedule invariants.
    Verify(VerifyArgs),
    /// Run the full pipeline on a seeded batch and compare against the LP bound.
    Report(ReportArgs),
    /// The single-flow worked example, end to end.
    Demo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Wct,
    Makespan,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Wct => ObjectiveKind::WeightedCompletion,
            ObjectiveArg::Makespan => ObjectiveKind::Makespan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "deterministic")]
    Det,
    #[value(alias = "randomized")]
    Rand,
}

impl From<ModeArg> for RoundingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Det => RoundingMode::Deterministic,
            ModeArg::Rand => RoundingMode::Randomized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "wct")]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value = "det")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solve the LP and simulate with exact rational arithmetic.
    #[arg(long)]
    exact: bool,
}

impl SolverArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            objective: self.objective.into(),
            mode: self.mode.into(),
            epsilon: self.epsilon,
            seed: self.seed,
            arithmetic: if self.exact {
                Arithmetic::Exact
            } else {
                Arithmetic::Float
            },
            paths: BTreeMap::new(),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2)]
    ports: usize,
    #[arg(long, default_value_t = 2)]
    cores: usize,
    #[arg(long, default_value_t = 2)]
    coflows: usize,
    /// Speed set each core draws from.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    speeds: Vec<u64>,
    /// Inclusive size range `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "2,10")]
    sizes: (u64, u64),
    #[arg(long, value_parser = parse_range, default_value = "0,0")]
    releases: (u64, u64),
    #[arg(long, value_parser = parse_range, default_value = "1,5")]
    weights: (u64, u64),
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_range(text: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = text.split_once(',').ok_or("expected `lo,hi`")?;
    let lo = lo.trim().parse::<u64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<u64>().map_err(|e| e.to_string())?;
    if lo > hi {
        return Err(format!("empty range {lo},{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Args)]
struct LpArgs {
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the model in CPLEX LP format.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    instance: PathBuf,
    /// LP solution from `lp`; solved on the fly when omitted.
    #[arg(long)]
    solution: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Per-step derandomization records as JSON lines.
    #[arg(long)]
    estimator_log: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    instance: PathBuf,
    assignment: PathBuf,
    #[arg(long)]
    exact: bool,
    /// Event trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    instance: PathBuf,
    #[arg(long)]
    solution: Option<PathBuf>,
    #[arg(long)]
    assignment: Option<PathBuf>,
    /// Schedule summary from `simulate`, compared against a fresh simulation.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 100)]
    n_instances: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    zero_release: bool,
    /// Brute-forceable instances; fills the `opt` column.
    #[arg(long)]
    tiny: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Exit code 1: bad input. Exit code 2: an internal invariant failed.
enum Failure {
    User(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::User(e)
    }
}

type Outcome = Result<(), Failure>;

fn invariant(msg: impl Into<String>) -> Failure {
    Failure::Invariant(anyhow!(msg.into()))
}

fn is_user_error(e: &PipelineError) -> bool {
    matches!(
        e,
        PipelineError::Lp(LpError::Record(_) | LpError::Io { .. })
            | PipelineError::Rounding(
                RoundingError::NonPositiveEpsilon(_)
                    | RoundingError::Mismatch(_)
                    | RoundingError::NotAssigned(_)
                    | RoundingError::AlreadyAssigned(_),
            )
            | PipelineError::Simulation(SimError::Coverage { .. } | SimError::BadCore { .. })
    )
}

fn classify(e: impl Into<PipelineError>) -> Failure {
    let e = e.into();
    if is_user_error(&e) {
        Failure::User(e.into())
    } else {
        Failure::Invariant(e.into())
    }
}

fn ensure_exists(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(anyhow!("file not found: {}", path.display()));
    }
    Ok(())
}

fn load_instance(path: &Path) -> anyhow::Result<CoflowInstance> {
    ensure_exists(path)?;
    instance::load(path).map_err(|e| match e {
        InstanceError::Invalid(v) => anyhow!("{}: invalid instance: {v}", path.display()),
        other => anyhow!(other),
    })
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    ensure_exists(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}: not a valid {what} file", path.display()))
}

fn write_text(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => io::stdout()
            .write_all(text.as_bytes())
            .context("writing to stdout"),
    }
}

fn write_json<T: Serialize>(output: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing output")? + "\n";
    write_text(output, &text)
}

fn record_path(config: &mut RunConfig, key: &str, path: Option<&Path>) {
    if let Some(p) = path {
        config
            .paths
            .insert(key.to_string(), p.display().to_string());
    }
}

#[derive(Serialize, Deserialize)]
struct LpOutput {
    #[serde(flatten)]
    solution: SolutionRecord,
    grid_extensions: usize,
    audit: LpAudit,
}

#[derive(Serialize, Deserialize)]
struct SimulateOutput {
    #[serde(flatten)]
    summary: serde_json::Value,
    /// Per-flow completion times keyed `i,j,k`.
    flows: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct ReportOutput<'a> {
    aggregate: Aggregate,
    reports: &'a [RatioReport],
}

fn gen(args: &GenArgs) -> Outcome {
    let params = GeneratorParams {
        ports: args.ports,
        cores: args.cores,
        coflows: args.coflows,
        speed_set: args.speeds.clone(),
        size_range: args.sizes,
        release_range: args.releases,
        weight_range: args.weights,
        density: args.density,
        seed: args.seed,
    };
    let inst = instance::generate_random(&params).map_err(|e| anyhow!(e))?;
    write_text(args.output.as_deref(), &(instance::to_json(&inst) + "\n"))?;
    log::info!(
        "generated {} flows in {} coflows",
        inst.flows().len(),
        inst.coflows().len()
    );
    Ok(())
}

fn lp_cmd(args: &LpArgs) -> Outcome {
    let inst = load_instance(&args.instance)?;
    let mut config = args.solver.config();
    record_path(&mut config, "instance", Some(&args.instance));
    record_path(&mut config, "export_lp", args.export_lp.as_deref());
    config.epsilon_rational().map_err(|e| anyhow!(e))?;
    let solved = pipeline::solve_lp(&inst, &config).map_err(classify)?;
    if let Some(path) = &args.export_lp {
        lp::export_lp_text(&solved.model, path).map_err(|e| anyhow!(e))?;
    }
    let audit = lp::audit(&solved.model, &solved.solution);
    if audit.max_probability_error > AUDIT_TOL || audit.max_capacity_excess > AUDIT_TOL {
        return Err(invariant(format!("LP solution fails its audit: {audit:?}")));
    }
    eprintln!(
        "LP objective {} ({} intervals, {} variables, {} rows)",
        solved.solution.objective,
        solved.grid.intervals(),
        solved.model.num_vars(),
        solved.model.rows().len()
    );
    let body = LpOutput {
        solution: solved.solution.to_record(&inst, &solved.grid),
        grid_extensions: solved.extensions,
        audit,
    };
    write_json(args.output.as_deref(), &Artifact::new(&config, body))?;
    Ok(())
}

fn load_solution(inst: &CoflowInstance, path: &Path) -> Result<(RunConfig, SolvedLp), Failure> {
    let art: Artifact<LpOutput> = read_json(path, "LP solution")?;
    let solved = SolvedLp::from_record(inst, &art.body.solution).map_err(classify)?;
    Ok((art.config, solved))
}

fn schedule_cmd(args: &ScheduleArgs) -> Outcome {
    let inst = load_instance(&args.instance)?;
    let (mut config, solved) = match &args.solution {
        Some(path) => {
            let (mut config, solved) = load_solution(&inst, path)?;
            let requested: RoundingMode = args.solver.mode.into();
            if requested != config.mode {
                log::warn!(
                    "solution was solved for {} rounding; its grid is kept for {} rounding",
                    config.mode,
                    requested
                );
            }
            config.mode = requested;
            config.seed = args.solver.seed;
            record_path(&mut config, "solution", Some(path));
            (config, solved)
        }
        None => {
            let config = args.solver.config();
            config.epsilon_rational().map_err(|e| anyhow!(e))?;
            let solved = pipeline::solve_lp(&inst, &config).map_err(classify)?;
            (config, solved)
        }
    };
    record_path(&mut config, "instance", Some(&args.instance));
    record_path(&mut config, "estimator_log", args.estimator_log.as_deref());
    let (assignment, report) = pipeline::round(&inst, &solved, &config).map_err(classify)?;
    assignment
        .check(&inst, &solved.grid)
        .map_err(|e| invariant(format!("rounding produced an invalid assignment: {e}")))?;
    if let Some(report) = &report {
        if let Some(path) = &args.estimator_log {
            write_text(Some(path), &report.to_json_lines())?;
        }
        eprintln!("estimator {} -> {}", report.initial, report.final_value);
    } else if args.estimator_log.is_some() {
        log::warn!("randomized rounding has no estimator log");
    }
    let art = Artifact::new(&config, assignment.to_record(&inst, config.epsilon));
    write_json(args.output.as_deref(), &art)?;
    Ok(())
}

fn load_assignment(inst: &CoflowInstance, path: &Path) -> Result<(RunConfig, Assignment), Failure> {
    let art: Artifact<AssignmentRecord> = read_json(path, "assignment")?;
    let a = Assignment::from_record(&art.body, inst).map_err(classify)?;
    if a.choices.iter().any(|c| c.core >= inst.cores()) {
        return Err(Failure::User(anyhow!(
            "{}: assignment names a core the instance lacks",
            path.display()
        )));
    }
    Ok((art.config, a))
}

fn flow_completions<S: simulator::Scalar>(
    inst: &CoflowInstance,
    s: &Schedule<S>,
) -> BTreeMap<String, serde_json::Value> {
    let ports = inst.ports();
    inst.flows()
        .iter()
        .zip(&s.completion)
        .map(|(f, c)| {
            (
                format!("{},{},{}", f.key.src, f.key.dst - ports, f.key.coflow),
                c.to_json(),
            )
        })
        .collect()
}

fn simulate_cmd(args: &SimulateArgs) -> Outcome {
    let inst = load_instance(&args.instance)?;
    let (mut config, assignment) = load_assignment(&inst, &args.assignment)?;
    config.arithmetic = if args.exact {
        Arithmetic::Exact
    } else {
        Arithmetic::Float
    };
    record_path(&mut config, "instance", Some(&args.instance));
    record_path(&mut config, "assignment", Some(&args.assignment));
    record_path(&mut config, "trace", args.trace.as_deref());
    fn run<S: simulator::Scalar>(
        inst: &CoflowInstance,
        a: &Assignment,
        trace: Option<&Path>,
    ) -> Result<SimulateOutput, Failure> {
        let s: Schedule<S> = list_schedule(inst, a).map_err(classify)?;
        let report = validate_schedule(&s, inst, a);
        if let Some(v) = report.violations.first() {
            return Err(invariant(format!(
                "simulated schedule violates {} invariant(s), first: {v:?}",
                report.violations.len()
            )));
        }
        if let Some(path) = trace {
            write_text(Some(path), &s.trace_json_lines(inst))?;
        }
        Ok(SimulateOutput {
            summary: s.summary_json(inst),
            flows: flow_completions(inst, &s),
        })
    }
    let out = if args.exact {
        run::<Rational>(&inst, &assignment, args.trace.as_deref())?
    } else {
        run::<f64>(&inst, &assignment, args.trace.as_deref())?
    };
    eprintln!(
        "wct {} makespan {}",
        out.summary["wct"], out.summary["makespan"]
    );
    write_json(args.output.as_deref(), &Artifact::new(&config, out))?;
    Ok(())
}

struct Checks {
    failed: usize,
}

impl Checks {
    fn report(&mut self, ok: bool, what: String) {
        println!("{} {what}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn verify_cmd(args: &VerifyArgs) -> Outcome {
    let inst = load_instance(&args.instance)?;
    let mut checks = Checks { failed: 0 };
    checks.report(
        true,
        format!(
            "instance: {} flows, {} coflows, {} cores",
            inst.flows().len(),
            inst.coflows().len(),
            inst.cores()
        ),
    );
    let solution = match &args.solution {
        Some(path) => {
            let (config, solved) = load_solution(&inst, path)?;
            let audit = lp::audit(&solved.model, &solved.solution);
            checks.report(
                audit.max_probability_error <= AUDIT_TOL,
                format!(
                    "solution: probabilities sum to 1 within {:.2e}",
                    audit.max_probability_error
                ),
            );
            checks.report(
                audit.max_capacity_excess <= AUDIT_TOL,
                format!(
                    "solution: capacity rows exceed 1 by at most {:.2e}",
                    audit.max_capacity_excess
                ),
            );
            checks.report(
                audit.max_violation <= AUDIT_TOL,
                format!(
                    "solution: largest row violation {:.2e}",
                    audit.max_violation
                ),
            );
            Some((config, solved))
        }
        None => None,
    };
    if let Some(path) = &args.assignment {
        let (config, assignment) = load_assignment(&inst, path)?;
        let grid = match &solution {
            Some((_, solved)) => solved.grid.clone(),
            None => {
                let eta = config.eta().map_err(|e| anyhow!(e))?;
                let base =
                    build_grid(&instance::time_horizon(&inst), &eta).map_err(|e| anyhow!(e))?;
                let needed = assignment
                    .choices
                    .iter()
                    .map(|c| c.interval + 1)
                    .max()
                    .unwrap_or(0);
                let extra = needed.saturating_sub(base.intervals());
                base.extended(extra)
            }
        };
        let check = assignment.check(&inst, &grid);
        checks.report(
            check.is_ok(),
            format!(
                "assignment: one eligible (core, interval) per flow{}",
                err_suffix(&check)
            ),
        );

        let exact: Schedule<Rational> = list_schedule(&inst, &assignment).map_err(classify)?;
        let float: Schedule<f64> = list_schedule(&inst, &assignment).map_err(classify)?;
        for (label, report) in [
            ("exact", validate_schedule(&exact, &inst, &assignment)),
            ("float", validate_schedule(&float, &inst, &assignment)),
        ] {
            let first = report
                .violations
                .first()
                .map(|v| format!(": {}", v.message))
                .unwrap_or_default();
            checks.report(
                report.is_clean(),
                format!(
                    "schedule ({label}): {} violations{first}",
                    report.violations.len()
                ),
            );
        }
        let agree = exact
            .completion
            .iter()
            .zip(&float.completion)
            .all(|(e, f)| (rational::to_f64(e) - f).abs() <= 1e-9 * (1.0 + f.abs()));
        checks.report(agree, "schedule: float and exact completions agree".into());
        let gaps = busy_window_gaps(&exact, &inst, &assignment);
        checks.report(
            gaps.iter().all(|g| *g == 0.0),
            "schedule: no idle gap in any last flow's busy window".into(),
        );

        if let Some((sol_config, solved)) = &solution {
            if assignment.mode == RoundingMode::Deterministic {
                let kind = sol_config.objective;
                match rounding::replay_estimator(
                    &solved.solution,
                    &solved.grid,
                    &inst,
                    &assignment,
                    kind,
                ) {
                    Ok(estimate) => {
                        let alg = pipeline::objective_of(&float, &inst, kind);
                        checks.report(
                            alg <= estimate + ESTIMATOR_TOL,
                            format!("estimator: simulated {kind} {alg} <= estimator {estimate}"),
                        );
                    }
                    Err(e) => checks.report(false, format!("estimator: {e}")),
                }
            }
        }

        if let Some(path) = &args.schedule {
            let art: Artifact<SimulateOutput> = read_json(path, "schedule summary")?;
            let fresh = flow_completions(&inst, &float);
            let matches = art.body.flows.len() == fresh.len()
                && fresh.iter().all(|(key, v)| {
                    let recorded = art.body.flows.get(key).and_then(value_f64);
                    let v = value_f64(v).unwrap_or(f64::NAN);
                    recorded.is_some_and(|r| (r - v).abs() <= 1e-9 * (1.0 + v.abs()))
                });
            checks.report(
                matches,
                format!(
                    "schedule summary {} matches a fresh simulation",
                    path.display()
                ),
            );
        }
    } else if args.schedule.is_some() {
        return Err(Failure::User(anyhow!("--schedule needs --assignment")));
    }
    if checks.failed > 0 {
        return Err(invariant(format!("{} check(s) failed", checks.failed)));
    }
    Ok(())
}

fn err_suffix<E: std::fmt::Display>(r: &Result<(), E>) -> String {
    match r {
        Ok(()) => String::new(),
        Err(e) => format!(": {e}"),
    }
}

fn value_f64(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => rational::parse_rational(s)
            .ok()
            .map(|r| rational::to_f64(&r)),
        _ => None,
    }
}

fn report_one(seed: u64, params: &BatchParams, config: &RunConfig, tiny: bool) -> RatioReport {
    let id = format!("batch-{seed}");
    let inst = match batch_instance(params, seed) {
        Ok(inst) => inst,
        Err(e) => {
            return RatioReport::failed(id, seed, config.objective, config.mode, e.to_string())
        }
    };
    let mut report = pipeline::evaluate(&id, seed, &inst, config);
    if tiny && report.error.is_none() {
        match brute_force_opt(
            &inst,
            config.objective,
            default_quantum(&inst),
            oracle::DEFAULT_STATE_BUDGET,
        ) {
            Ok(opt) => {
                let opt = rational::to_f64(&opt.value);
                if report.lp > opt + 1e-6 || opt > report.alg + 1e-6 {
                    report.pass = false;
                    report.error = Some(format!(
                        "LP {} <= OPT {opt} <= ALG {} fails",
                        report.lp, report.alg
                    ));
                }
                report.opt = Some(opt);
            }
            Err(e) => log::warn!("{id}: brute force skipped: {e}"),
        }
    }
    report
}

fn report_cmd(args: &ReportArgs) -> Outcome {
    let mut config = args.solver.config();
    record_path(&mut config, "output", args.output.as_deref());
    config.epsilon_rational().map_err(|e| anyhow!(e))?;
    let mut params = if args.tiny {
        BatchParams::tiny()
    } else {
        BatchParams::default()
    };
    if args.zero_release {
        params.max_release = 0;
    }
    let start = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Failure::User(anyhow!("--jobs must be at least 1")));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| anyhow!(e))?;
    let seeds: Vec<u64> = (0..args.n_instances)
        .map(|i| args.solver.seed + i)
        .collect();
    let reports: Vec<RatioReport> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| report_one(s, &params, &config, args.tiny))
            .collect()
    });
    let agg = oracle::aggregate(&reports);
    match args.format {
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &reports {
                w.serialize(RatioRow::from(r)).map_err(|e| anyhow!(e))?;
            }
            let bytes = w.into_inner().map_err(|e| anyhow!(e.to_string()))?;
            write_text(
                args.output.as_deref(),
                &String::from_utf8(bytes).map_err(|e| anyhow!(e))?,
            )?;
        }
        FormatArg::Json => {
            let body = ReportOutput {
                aggregate: agg.clone(),
                reports: &reports,
            };
            write_json(args.output.as_deref(), &Artifact::new(&config, body))?;
        }
    }
    eprintln!(
        "{}/{} passed, max ratio {:.4}, mean ratio {:.4}, {:.2?}",
        agg.passed,
        agg.count,
        agg.max_ratio,
        agg.mean_ratio,
        start.elapsed()
    );
    if agg.passed < agg.count {
        for f in &agg.failures {
            eprintln!("failed: {f}");
        }
        return Err(invariant(format!(
            "{} instance(s) failed",
            agg.count - agg.passed
        )));
    }
    Ok(())
}

fn demo() -> Outcome {
    let text = r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#;
    let inst = instance::parse(text, Path::new("demo")).map_err(|e| anyhow!(e))?;
    // η = 1 with deterministic rounding
    let config = RunConfig {
        epsilon: 2.0,
        ..RunConfig::default()
    };
    let run = pipeline::run_pipeline(&inst, &config).map_err(classify)?;
    println!("instance: one flow (1,1,1), size 2, one core of speed 1, weight 1, release 0");
    println!("eta = 1, intervals = {}", run.solved.grid.intervals());
    println!("LP value: {}", run.lp_value);
    for (core, interval, prob) in run.solved.solution.distribution(0) {
        println!(
            "  y on core {} interval {interval}: probability {prob}",
            core + 1
        );
    }
    println!(
        "assignment: p={}, l={}",
        run.assignment.core_of(0) + 1,
        run.assignment.interval_of(0)
    );
    println!("simulated completion: {}", run.schedule.completion[0]);
    println!("ratio: {:.3} (bound {})", run.ratio(), config.bound(&inst));
    if run.ratio() > config.bound(&inst) + 1e-9 || run.schedule_violations > 0 {
        return Err(invariant("demo exceeds its bound"));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COFLOWSCHED_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Lp(a) => lp_cmd(a),
        Command::Schedule(a) => schedule_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Demo => demo(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("internal invariant violated: {e:#}");
            ExitCode::from(2)
        }
    }
}
