//! End-to-end runs: LP, rounding, simulation, ratio against the LP bound.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    validate, CoflowInstance, CoflowRecord, CoreRecord, FlowRecord, InstanceRecord, ValidationError,
};
use crate::lp::{self, LpAudit, LpError, ObjectiveKind, SolvedLp};
use crate::oracle::RatioReport;
use crate::rational::{self, Number, Rational};
use crate::rounding::{self, Assignment, EstimatorReport, RoundingError, RoundingMode};
use crate::simulator::{list_schedule, objective_values, validate_schedule, Schedule, SimError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    Float,
    Exact,
}

/// Settings shared by every stage; echoed into each artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub objective: ObjectiveKind,
    pub mode: RoundingMode,
    pub epsilon: f64,
    pub seed: u64,
    pub arithmetic: Arithmetic,
    #[serde(default)]
    pub paths: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            objective: ObjectiveKind::WeightedCompletion,
            mode: RoundingMode::Deterministic,
            epsilon: 1.0,
            seed: 0,
            arithmetic: Arithmetic::Float,
            paths: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// `ε` read exactly from its shortest decimal form (`0.1` is `1/10`).
    pub fn epsilon_rational(&self) -> Result<Rational, RoundingError> {
        if !self.epsilon.is_finite() {
            return Err(RoundingError::NonPositiveEpsilon(self.epsilon.to_string()));
        }
        let eps = rational::parse_rational(&format!("{:?}", self.epsilon))
            .map_err(RoundingError::NonPositiveEpsilon)?;
        rounding::eta_from_epsilon(&eps, self.mode)?;
        Ok(eps)
    }

    pub fn eta(&self) -> Result<Rational, RoundingError> {
        rounding::eta_from_epsilon(&self.epsilon_rational()?, self.mode)
    }

    /// The guarantee the run is checked against: `3+ε` for weighted
    /// completion time with releases, `2+ε` without releases and for makespan.
    pub fn bound(&self, inst: &CoflowInstance) -> f64 {
        match self.objective {
            ObjectiveKind::WeightedCompletion if !inst.has_zero_releases() => 3.0 + self.epsilon,
            _ => 2.0 + self.epsilon,
        }
    }
}

/// An artifact body with the configuration and tool version that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: String,
    pub config: RunConfig,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Artifact<T> {
    pub fn new(config: &RunConfig, body: T) -> Self {
        Artifact {
            version: VERSION.to_string(),
            config: config.clone(),
            body,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("schedule audit failed: {0}")]
    Audit(String),
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub solved: SolvedLp,
    pub assignment: Assignment,
    pub estimator: Option<EstimatorReport>,
    pub schedule: Schedule<f64>,
    pub exact_schedule: Option<Schedule<Rational>>,
    pub lp_value: f64,
    pub alg_value: f64,
    pub lp_audit: LpAudit,
    pub schedule_violations: usize,
}

impl PipelineRun {
    pub fn ratio(&self) -> f64 {
        self.alg_value / self.lp_value
    }
}

pub fn solve_lp(inst: &CoflowInstance, config: &RunConfig) -> Result<SolvedLp, PipelineError> {
    let eta = config.eta()?;
    Ok(lp::solve_instance(
        inst,
        &eta,
        config.objective,
        config.arithmetic == Arithmetic::Exact,
    )?)
}

pub fn round(
    inst: &CoflowInstance,
    solved: &SolvedLp,
    config: &RunConfig,
) -> Result<(Assignment, Option<EstimatorReport>), PipelineError> {
    Ok(match config.mode {
        RoundingMode::Deterministic => {
            let (a, report) =
                rounding::derandomize_for(config.objective, &solved.solution, &solved.grid, inst)?;
            (a, Some(report))
        }
        RoundingMode::Randomized => (
            rounding::sample_assignment(&solved.solution, inst, &solved.grid, config.seed)?,
            None,
        ),
    })
}

pub fn objective_of(schedule: &Schedule<f64>, inst: &CoflowInstance, kind: ObjectiveKind) -> f64 {
    let obj = objective_values(schedule, inst);
    match kind {
        ObjectiveKind::WeightedCompletion => obj.wct,
        ObjectiveKind::Makespan => obj.makespan,
    }
}

/// LP, rounding and simulation for one instance. Exact arithmetic also runs
/// the exact LP and the exact simulator; reported values come from the
/// exact schedule in that case.
pub fn run_pipeline(
    inst: &CoflowInstance,
    config: &RunConfig,
) -> Result<PipelineRun, PipelineError> {
    let solved = solve_lp(inst, config)?;
    let lp_audit = lp::audit(&solved.model, &solved.solution);
    let (assignment, estimator) = round(inst, &solved, config)?;
    let mut schedule = list_schedule::<f64>(inst, &assignment)?;
    let mut schedule_violations = validate_schedule(&schedule, inst, &assignment)
        .violations
        .len();
    let exact_schedule = match config.arithmetic {
        Arithmetic::Exact => {
            let exact = list_schedule::<Rational>(inst, &assignment)?;
            schedule_violations += validate_schedule(&exact, inst, &assignment)
                .violations
                .len();
            schedule = exact.to_f64();
            Some(exact)
        }
        Arithmetic::Float => None,
    };
    let alg_value = objective_of(&schedule, inst, config.objective);
    let lp_value = solved
        .solution
        .exact_objective
        .as_ref()
        .map_or(solved.solution.objective, rational::to_f64);
    Ok(PipelineRun {
        solved,
        assignment,
        estimator,
        schedule,
        exact_schedule,
        lp_value,
        alg_value,
        lp_audit,
        schedule_violations,
    })
}

/// Runs the pipeline and packages the outcome as a ratio report; errors are
/// captured in the report.
pub fn evaluate(id: &str, seed: u64, inst: &CoflowInstance, config: &RunConfig) -> RatioReport {
    let start = Instant::now();
    let bound = config.bound(inst);
    match run_pipeline(inst, config) {
        Ok(run) => {
            let ratio = run.ratio();
            RatioReport {
                instance: id.to_string(),
                seed,
                objective: config.objective,
                mode: config.mode,
                lp: run.lp_value,
                alg: run.alg_value,
                opt: None,
                ratio,
                bound,
                pass: ratio <= bound + 1e-9,
                ms: start.elapsed().as_millis(),
                estimator: run.estimator.as_ref().map(|e| e.final_value),
                descent_gap: run.estimator.as_ref().map(|e| e.worst_descent_gap()),
                probability_error: run.lp_audit.max_probability_error,
                capacity_excess: run.lp_audit.max_capacity_excess,
                schedule_violations: run.schedule_violations,
                error: None,
            }
        }
        Err(e) => RatioReport::failed(
            id.to_string(),
            seed,
            config.objective,
            config.mode,
            e.to_string(),
        ),
    }
}

/// Shape of the benchmark batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchParams {
    pub max_ports: usize,
    pub max_cores: usize,
    pub max_coflows: usize,
    /// Speeds are drawn from a random nonempty subset of this set.
    pub speeds: Vec<u64>,
    /// Sizes are integers in `[s_max, size_factor·s_max]`.
    pub size_factor: u64,
    pub max_release: u64,
    pub max_weight: u64,
    pub density: f64,
}

impl Default for BatchParams {
    fn default() -> Self {
        BatchParams {
            max_ports: 4,
            max_cores: 3,
            max_coflows: 5,
            speeds: vec![1, 2, 3],
            size_factor: 10,
            max_release: 5,
            max_weight: 5,
            density: 0.5,
        }
    }
}

/// One batch instance, a pure function of `(params, seed)`. `N`, `m` and `n`
/// are uniform in their ranges; a nonempty speed subset is drawn and each
/// core draws its speed from it; sizes are relative to the instance's
/// actual `s_max`.
pub fn batch_instance(params: &BatchParams, seed: u64) -> Result<CoflowInstance, ValidationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ports = rng.gen_range(1..=params.max_ports);
    let cores = rng.gen_range(1..=params.max_cores);
    let coflows = rng.gen_range(1..=params.max_coflows);
    let subset: Vec<u64> = loop {
        let s: Vec<u64> = params
            .speeds
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        if !s.is_empty() {
            break s;
        }
    };
    let speeds: Vec<u64> = (0..cores)
        .map(|_| *subset.choose(&mut rng).expect("nonempty"))
        .collect();
    let s_max = *speeds.iter().max().expect("at least one core");
    let coflows = (0..coflows)
        .map(|_| {
            let weight = rng.gen_range(1..=params.max_weight);
            let release = rng.gen_range(0..=params.max_release);
            let mut pairs: Vec<(usize, usize)> = (1..=ports)
                .flat_map(|i| (1..=ports).map(move |j| (i, j)))
                .filter(|_| rng.gen_bool(params.density))
                .collect();
            if pairs.is_empty() {
                pairs.push((rng.gen_range(1..=ports), rng.gen_range(1..=ports)));
            }
            CoflowRecord {
                weight: Number::from_int(weight as i64),
                release: Number::from_int(release as i64),
                flows: pairs
                    .into_iter()
                    .map(|(src, dst)| FlowRecord {
                        src: src as i64,
                        dst: dst as i64,
                        size: Number::from_int(
                            rng.gen_range(s_max..=params.size_factor * s_max) as i64
                        ),
                    })
                    .collect(),
            }
        })
        .collect();
    validate(&InstanceRecord {
        ports: ports as i64,
        cores: speeds
            .into_iter()
            .map(|s| CoreRecord {
                speed: Number::from_int(s as i64),
            })
            .collect(),
        coflows,
    })
}

impl BatchParams {
    /// Instances small enough for the brute-force and enumeration oracles.
    pub fn tiny() -> Self {
        BatchParams {
            max_ports: 2,
            max_cores: 2,
            max_coflows: 3,
            speeds: vec![1, 2],
            size_factor: 3,
            max_release: 2,
            max_weight: 3,
            density: 0.4,
        }
    }
}

/// The first `count` batch instances from `seed` upwards with at most
/// `max_flows` flows, paired with their seeds.
pub fn instances_with_at_most(
    params: &BatchParams,
    seed: u64,
    count: usize,
    max_flows: usize,
) -> Vec<(u64, CoflowInstance)> {
    (seed..)
        .filter_map(|s| batch_instance(params, s).ok().map(|inst| (s, inst)))
        .filter(|(_, inst)| inst.flows().len() <= max_flows)
        .take(count)
        .collect()
}
