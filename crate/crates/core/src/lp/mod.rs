//! Interval-indexed LP relaxation for both objectives.
//!
//! Variables `y[f, p, ℓ]` exist only for intervals eligible for the flow's
//! release. Rows, in order: one demand row per flow, input-capacity rows per
//! `(i, p, ℓ)`, output-capacity rows per `(j, p, ℓ)`, then one linking row per
//! flow tying the flow's LP completion time to its coflow's `C_k` (or to
//! `C_max`). Coefficients are kept exact; the float solver sees `f64` copies.

pub mod simplex;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use num::{BigInt, One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{time_horizon, CoflowInstance, FlowKey};
use crate::rational::{self, Number, Rational};
use crate::timegrid::{build_grid, GridError, IntervalGrid};
use simplex::{Constraint, Problem, Sense, SimplexError, FEASIBILITY_TOL};

/// Models with at most this many variables are re-solved exactly when the
/// float solve fails its residual audit.
const EXACT_FALLBACK_VARS: usize = 400;
/// Grid extensions tried by [`solve_instance`] before giving up.
const MAX_GRID_EXTENSIONS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "wct")]
    WeightedCompletion,
    #[serde(rename = "makespan")]
    Makespan,
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::WeightedCompletion => "wct",
            ObjectiveKind::Makespan => "makespan",
        })
    }
}

/// A `y` variable: flow index, 0-based core, interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarKey {
    pub flow: usize,
    pub core: usize,
    pub interval: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Demand {
        flow: usize,
    },
    InputCapacity {
        port: usize,
        core: usize,
        interval: usize,
    },
    OutputCapacity {
        port: usize,
        core: usize,
        interval: usize,
    },
    Linking {
        flow: usize,
    },
}

#[derive(Clone, Debug)]
pub struct ModelRow {
    pub kind: RowKind,
    pub sense: Sense,
    pub rhs: Rational,
    pub coeffs: Vec<(usize, Rational)>,
}

#[derive(Clone, Debug)]
pub struct LpModel {
    kind: ObjectiveKind,
    ports: usize,
    cores: usize,
    intervals: usize,
    flow_keys: Vec<FlowKey>,
    vars: Vec<VarKey>,
    /// Contiguous block of `vars` per flow, ordered by core then interval.
    flow_vars: Vec<Range<usize>>,
    first_interval: Vec<usize>,
    /// `s_p·|I_ℓ|/d` per `y` variable: its weight in the demand row.
    shares: Vec<Rational>,
    /// `f(i,j,k,p,ℓ)/y` per `y` variable.
    completion_coeffs: Vec<Rational>,
    aux_start: usize,
    num_vars: usize,
    objective: Vec<(usize, Rational)>,
    rows: Vec<ModelRow>,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("flow {0} has no eligible interval on this grid")]
    NoEligibleInterval(FlowKey),
    #[error("model has no variables")]
    EmptyModel,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("LP still infeasible after extending the grid {0} times")]
    InfeasibleAfterExtension(usize),
    #[error("solution audit failed: {0}")]
    Audit(String),
    #[error("solution record does not match model: {0}")]
    Record(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The coefficient multiplying `y` in `f(i,j,k,p,ℓ)`:
/// `(s_p/d · notational_left(ℓ) + 1/2) · |I_ℓ|`.
pub fn f_coefficient(
    inst: &CoflowInstance,
    grid: &IntervalGrid,
    flow: usize,
    core: usize,
    interval: usize,
) -> Rational {
    let d = Rational::from_integer(BigInt::from(inst.flow(flow).size));
    (inst.speed(core) / d * grid.notational_left(interval) + rational::half())
        * grid.length(interval)
}

fn demand_share(
    inst: &CoflowInstance,
    grid: &IntervalGrid,
    flow: usize,
    core: usize,
    interval: usize,
) -> Rational {
    let d = Rational::from_integer(BigInt::from(inst.flow(flow).size));
    inst.speed(core) * grid.length(interval) / d
}

pub fn build_wct_lp(inst: &CoflowInstance, grid: &IntervalGrid) -> Result<LpModel, LpError> {
    build_model(inst, grid, ObjectiveKind::WeightedCompletion)
}

pub fn build_makespan_lp(inst: &CoflowInstance, grid: &IntervalGrid) -> Result<LpModel, LpError> {
    build_model(inst, grid, ObjectiveKind::Makespan)
}

pub fn build_model(
    inst: &CoflowInstance,
    grid: &IntervalGrid,
    kind: ObjectiveKind,
) -> Result<LpModel, LpError> {
    let flows = inst.flows();
    if flows.is_empty() {
        return Err(LpError::EmptyModel);
    }
    let (ports, cores, intervals) = (inst.ports(), inst.cores(), grid.intervals());

    let mut vars = Vec::new();
    let mut flow_vars = Vec::with_capacity(flows.len());
    let mut first_interval = Vec::with_capacity(flows.len());
    let mut shares = Vec::new();
    let mut completion_coeffs = Vec::new();
    for (f, flow) in flows.iter().enumerate() {
        let eligible = grid.eligible_intervals(inst.release_of(f));
        if eligible.is_empty() {
            return Err(LpError::NoEligibleInterval(flow.key));
        }
        let start = vars.len();
        for core in 0..cores {
            for interval in eligible.clone() {
                vars.push(VarKey {
                    flow: f,
                    core,
                    interval,
                });
                shares.push(demand_share(inst, grid, f, core, interval));
                completion_coeffs.push(f_coefficient(inst, grid, f, core, interval));
            }
        }
        flow_vars.push(start..vars.len());
        first_interval.push(eligible.start);
    }
    let aux_start = vars.len();
    let num_vars = match kind {
        ObjectiveKind::WeightedCompletion => aux_start + inst.coflows().len(),
        ObjectiveKind::Makespan => aux_start + 1,
    };
    let objective = match kind {
        ObjectiveKind::WeightedCompletion => inst
            .coflows()
            .iter()
            .enumerate()
            .map(|(k, c)| (aux_start + k, c.weight.clone()))
            .collect(),
        ObjectiveKind::Makespan => vec![(aux_start, Rational::one())],
    };

    let mut rows = Vec::new();
    for (f, range) in flow_vars.iter().enumerate() {
        rows.push(ModelRow {
            kind: RowKind::Demand { flow: f },
            sense: Sense::Eq,
            rhs: Rational::one(),
            coeffs: range.clone().map(|v| (v, shares[v].clone())).collect(),
        });
    }
    // capacity rows: bucket variables by (port, core, interval)
    let slot =
        |port0: usize, core: usize, interval: usize| (port0 * cores + core) * intervals + interval;
    let mut input: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); ports * cores * intervals];
    let mut output: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); ports * cores * intervals];
    for (v, key) in vars.iter().enumerate() {
        let fk = flows[key.flow].key;
        input[slot(fk.src - 1, key.core, key.interval)].push((v, Rational::one()));
        output[slot(fk.dst - ports - 1, key.core, key.interval)].push((v, Rational::one()));
    }
    for (side, buckets) in [(0, input), (1, output)] {
        for (idx, coeffs) in buckets.into_iter().enumerate() {
            let interval = idx % intervals;
            let core = (idx / intervals) % cores;
            let port0 = idx / (intervals * cores);
            let kind = if side == 0 {
                RowKind::InputCapacity {
                    port: port0 + 1,
                    core,
                    interval,
                }
            } else {
                RowKind::OutputCapacity {
                    port: ports + port0 + 1,
                    core,
                    interval,
                }
            };
            rows.push(ModelRow {
                kind,
                sense: Sense::Le,
                rhs: Rational::one(),
                coeffs,
            });
        }
    }
    for (f, range) in flow_vars.iter().enumerate() {
        let target = match kind {
            ObjectiveKind::WeightedCompletion => aux_start + flows[f].key.coflow - 1,
            ObjectiveKind::Makespan => aux_start,
        };
        let mut coeffs = vec![(target, Rational::one())];
        coeffs.extend(range.clone().map(|v| (v, -completion_coeffs[v].clone())));
        rows.push(ModelRow {
            kind: RowKind::Linking { flow: f },
            sense: Sense::Ge,
            rhs: Rational::zero(),
            coeffs,
        });
    }

    Ok(LpModel {
        kind,
        ports,
        cores,
        intervals,
        flow_keys: flows.iter().map(|f| f.key).collect(),
        vars,
        flow_vars,
        first_interval,
        shares,
        completion_coeffs,
        aux_start,
        num_vars,
        objective,
        rows,
    })
}

impl LpModel {
    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn vars(&self) -> &[VarKey] {
        &self.vars
    }

    pub fn y_count(&self) -> usize {
        self.aux_start
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn aux_count(&self) -> usize {
        self.num_vars - self.aux_start
    }

    pub fn rows(&self) -> &[ModelRow] {
        &self.rows
    }

    pub fn objective(&self) -> &[(usize, Rational)] {
        &self.objective
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn flow_vars(&self, flow: usize) -> Range<usize> {
        self.flow_vars[flow].clone()
    }

    pub fn var_index(&self, key: VarKey) -> Option<usize> {
        let first = self.first_interval[key.flow];
        if key.core >= self.cores || key.interval < first || key.interval >= self.intervals {
            return None;
        }
        let per_core = self.intervals - first;
        Some(self.flow_vars[key.flow].start + key.core * per_core + key.interval - first)
    }

    pub fn count_rows(&self, pred: impl Fn(&RowKind) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(&r.kind)).count()
    }

    /// `y_i_j_k_p_l` (external destination numbering, 1-based core), `C_k`, `Cmax`.
    pub fn var_name(&self, v: usize) -> String {
        if v < self.aux_start {
            let key = self.vars[v];
            let fk = self.flow_keys[key.flow];
            format!(
                "y_{}_{}_{}_{}_{}",
                fk.src,
                fk.dst - self.ports,
                fk.coflow,
                key.core + 1,
                key.interval
            )
        } else {
            match self.kind {
                ObjectiveKind::WeightedCompletion => format!("C_{}", v - self.aux_start + 1),
                ObjectiveKind::Makespan => "Cmax".to_string(),
            }
        }
    }

    fn row_name(&self, row: &ModelRow) -> String {
        let flow_tag = |f: usize| {
            let k = self.flow_keys[f];
            format!("{}_{}_{}", k.src, k.dst - self.ports, k.coflow)
        };
        match row.kind {
            RowKind::Demand { flow } => format!("demand_{}", flow_tag(flow)),
            RowKind::InputCapacity {
                port,
                core,
                interval,
            } => {
                format!("in_{}_{}_{}", port, core + 1, interval)
            }
            RowKind::OutputCapacity {
                port,
                core,
                interval,
            } => {
                format!("out_{}_{}_{}", port - self.ports, core + 1, interval)
            }
            RowKind::Linking { flow } => format!("link_{}", flow_tag(flow)),
        }
    }

    pub fn to_problem_f64(&self) -> Problem<f64> {
        let mut cost = vec![0.0; self.num_vars];
        for (v, c) in &self.objective {
            cost[*v] = rational::to_f64(c);
        }
        Problem {
            num_vars: self.num_vars,
            cost,
            rows: self
                .rows
                .iter()
                .map(|r| Constraint {
                    coeffs: r
                        .coeffs
                        .iter()
                        .map(|(v, c)| (*v, rational::to_f64(c)))
                        .collect(),
                    sense: r.sense,
                    rhs: rational::to_f64(&r.rhs),
                })
                .collect(),
        }
    }

    pub fn to_problem_exact(&self) -> Problem<Rational> {
        let mut cost = vec![Rational::zero(); self.num_vars];
        for (v, c) in &self.objective {
            cost[*v] = c.clone();
        }
        Problem {
            num_vars: self.num_vars,
            cost,
            rows: self
                .rows
                .iter()
                .map(|r| Constraint {
                    coeffs: r.coeffs.clone(),
                    sense: r.sense,
                    rhs: r.rhs.clone(),
                })
                .collect(),
        }
    }

    /// CPLEX LP text. Empty capacity rows are omitted.
    pub fn to_lp_text(&self) -> Result<String, LpError> {
        if self.num_vars == 0 || self.vars.is_empty() {
            return Err(LpError::EmptyModel);
        }
        let term = |first: bool, coeff: f64, name: &str| -> String {
            let sign = if coeff < 0.0 {
                "-"
            } else if first {
                ""
            } else {
                "+"
            };
            let sep = if first && coeff >= 0.0 { "" } else { " " };
            format!("{sign}{sep}{} {name}", coeff.abs())
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\ interval-indexed coflow LP, objective {}",
            self.kind
        );
        out.push_str("Minimize\n obj:");
        for (n, (v, c)) in self.objective.iter().enumerate() {
            let _ = write!(
                out,
                " {}",
                term(n == 0, rational::to_f64(c), &self.var_name(*v))
            );
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            if row.coeffs.is_empty() {
                continue;
            }
            let _ = write!(out, " {}:", self.row_name(row));
            for (n, (v, c)) in row.coeffs.iter().enumerate() {
                let _ = write!(
                    out,
                    " {}",
                    term(n == 0, rational::to_f64(c), &self.var_name(*v))
                );
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", rational::to_f64(&row.rhs));
        }
        out.push_str("End\n");
        Ok(out)
    }
}

pub fn export_lp_text(model: &LpModel, path: impl AsRef<Path>) -> Result<(), LpError> {
    let path = path.as_ref();
    let text = model.to_lp_text()?;
    fs::write(path, text).map_err(|source| LpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Solutions

/// An optimal (or loaded) fractional solution and the quantities derived from it.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub kind: ObjectiveKind,
    /// Value per model variable (the `y` block, then `C_k` or `C_max`).
    pub values: Vec<f64>,
    pub objective: f64,
    /// Present when the solution came from exact pivoting.
    pub exact_objective: Option<Rational>,
    /// `C_ijk = Σ f(i,j,k,p,ℓ)` per flow.
    pub flow_completion: Vec<f64>,
    /// Per coflow: the `C_k` variable (WCT) or the max of its flows' `C_ijk` (makespan).
    pub coflow_completion: Vec<f64>,
    pub makespan: f64,
    vars: Vec<VarKey>,
    flow_vars: Vec<Range<usize>>,
    shares: Vec<f64>,
    completion_coeffs: Vec<f64>,
}

impl LpSolution {
    fn from_values(
        model: &LpModel,
        values: Vec<f64>,
        exact_objective: Option<Rational>,
        coflows: usize,
    ) -> Self {
        let shares: Vec<f64> = model.shares.iter().map(rational::to_f64).collect();
        let completion_coeffs: Vec<f64> = model
            .completion_coeffs
            .iter()
            .map(rational::to_f64)
            .collect();
        let flow_completion: Vec<f64> = model
            .flow_vars
            .iter()
            .map(|r| r.clone().map(|v| completion_coeffs[v] * values[v]).sum())
            .collect();
        let objective = model
            .objective
            .iter()
            .map(|(v, c)| rational::to_f64(c) * values[*v])
            .sum();
        let coflow_completion = match model.kind {
            ObjectiveKind::WeightedCompletion => {
                values[model.aux_start..model.aux_start + coflows].to_vec()
            }
            ObjectiveKind::Makespan => {
                let mut out = vec![0.0f64; coflows];
                for (f, c) in flow_completion.iter().enumerate() {
                    let k = model.flow_keys[f].coflow - 1;
                    out[k] = out[k].max(*c);
                }
                out
            }
        };
        let makespan = match model.kind {
            ObjectiveKind::Makespan => values[model.aux_start],
            ObjectiveKind::WeightedCompletion => {
                coflow_completion.iter().copied().fold(0.0, f64::max)
            }
        };
        LpSolution {
            kind: model.kind,
            values,
            objective,
            exact_objective,
            flow_completion,
            coflow_completion,
            makespan,
            vars: model.vars.clone(),
            flow_vars: model.flow_vars.clone(),
            shares,
            completion_coeffs,
        }
    }

    pub fn flows(&self) -> usize {
        self.flow_vars.len()
    }

    pub fn vars(&self) -> &[VarKey] {
        &self.vars
    }

    pub fn y_value(&self, v: usize) -> f64 {
        self.values[v]
    }

    /// Rounding probability `s_p·y·|I_ℓ|/d` of the `y` variable `v`.
    pub fn probability(&self, v: usize) -> f64 {
        self.shares[v] * self.values[v]
    }

    /// Raw (unnormalized) probability mass of a flow; 1 up to solver tolerance.
    pub fn probability_mass(&self, flow: usize) -> f64 {
        self.flow_vars[flow]
            .clone()
            .map(|v| self.probability(v))
            .sum()
    }

    /// `(core, interval, probability)` over the support of the flow's
    /// distribution, renormalized to sum to exactly one.
    pub fn distribution(&self, flow: usize) -> Vec<(usize, usize, f64)> {
        let mass = self.probability_mass(flow);
        self.flow_vars[flow]
            .clone()
            .filter_map(|v| {
                let p = self.probability(v).max(0.0) / mass;
                (p > 0.0).then(|| (self.vars[v].core, self.vars[v].interval, p))
            })
            .collect()
    }

    pub fn flow_var_range(&self, flow: usize) -> Range<usize> {
        self.flow_vars[flow].clone()
    }

    pub fn completion_coeff(&self, v: usize) -> f64 {
        self.completion_coeffs[v]
    }
}

fn check_solution(model: &LpModel, values: &[f64]) -> Result<(), String> {
    let audit = audit_values(model, values);
    if audit.max_violation > FEASIBILITY_TOL {
        return Err(format!(
            "max constraint violation {:.3e}",
            audit.max_violation
        ));
    }
    Ok(())
}

/// Residuals of a solution against every row of its model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpAudit {
    /// `max_f |Σ prob(f) − 1|`.
    pub max_probability_error: f64,
    /// `max(0, max over capacity rows of Σ y − 1)`.
    pub max_capacity_excess: f64,
    /// Largest violation over all rows and nonnegativity.
    pub max_violation: f64,
}

fn audit_values(model: &LpModel, values: &[f64]) -> LpAudit {
    let mut max_probability_error = 0.0f64;
    let mut max_capacity_excess = 0.0f64;
    let mut max_violation = values.iter().fold(0.0f64, |a, v| a.max(-v));
    for row in &model.rows {
        let lhs: f64 = row
            .coeffs
            .iter()
            .map(|(v, c)| rational::to_f64(c) * values[*v])
            .sum();
        let rhs = rational::to_f64(&row.rhs);
        let violation = match row.sense {
            Sense::Le => lhs - rhs,
            Sense::Ge => rhs - lhs,
            Sense::Eq => (lhs - rhs).abs(),
        };
        max_violation = max_violation.max(violation);
        match row.kind {
            RowKind::Demand { .. } => {
                max_probability_error = max_probability_error.max((lhs - 1.0).abs())
            }
            RowKind::InputCapacity { .. } | RowKind::OutputCapacity { .. } => {
                max_capacity_excess = max_capacity_excess.max(lhs - 1.0)
            }
            RowKind::Linking { .. } => {}
        }
    }
    LpAudit {
        max_probability_error,
        max_capacity_excess: max_capacity_excess.max(0.0),
        max_violation,
    }
}

pub fn audit(model: &LpModel, sol: &LpSolution) -> LpAudit {
    audit_values(model, &sol.values)
}

/// Solves with the float revised simplex; on numerical failure small models
/// are re-solved with exact pivoting.
pub fn solve(model: &LpModel, inst: &CoflowInstance) -> Result<LpSolution, LpError> {
    if model.vars.is_empty() {
        return Err(LpError::EmptyModel);
    }
    let coflows = inst.coflows().len();
    let float = simplex::solve_f64(&model.to_problem_f64());
    let failure = match float {
        Ok(opt) => match check_solution(model, &opt.x) {
            Ok(()) => {
                log::debug!(
                    "LP solved in {} iterations, objective {}",
                    opt.iterations,
                    opt.objective
                );
                return Ok(LpSolution::from_values(model, opt.x, None, coflows));
            }
            Err(msg) => LpError::Audit(msg),
        },
        Err(SimplexError::Numerical(msg)) => LpError::Simplex(SimplexError::Numerical(msg)),
        Err(e) => return Err(e.into()),
    };
    if model.num_vars <= EXACT_FALLBACK_VARS {
        log::warn!("float simplex failed ({failure}); falling back to exact pivoting");
        return solve_exact(model, inst);
    }
    Err(failure)
}

pub fn solve_exact(model: &LpModel, inst: &CoflowInstance) -> Result<LpSolution, LpError> {
    if model.vars.is_empty() {
        return Err(LpError::EmptyModel);
    }
    let opt = simplex::solve_exact(&model.to_problem_exact())?;
    let values = opt.x.iter().map(rational::to_f64).collect();
    Ok(LpSolution::from_values(
        model,
        values,
        Some(opt.objective),
        inst.coflows().len(),
    ))
}

/// Grid, model and optimal solution for an instance at a given `η`.
#[derive(Clone, Debug)]
pub struct SolvedLp {
    pub grid: IntervalGrid,
    pub model: LpModel,
    pub solution: LpSolution,
    /// Intervals appended beyond the minimal `L` to reach feasibility.
    pub extensions: usize,
}

/// Builds the grid from the instance horizon, then builds and solves the LP.
/// When a release leaves a coflow with no eligible interval, or with too
/// little eligible capacity, the grid is extended one interval at a time.
pub fn solve_instance(
    inst: &CoflowInstance,
    eta: &Rational,
    kind: ObjectiveKind,
    exact: bool,
) -> Result<SolvedLp, LpError> {
    let base = build_grid(&time_horizon(inst), eta)?;
    for extensions in 0..=MAX_GRID_EXTENSIONS {
        let grid = base.extended(extensions);
        let model = match build_model(inst, &grid, kind) {
            Ok(m) => m,
            Err(LpError::NoEligibleInterval(_)) => continue,
            Err(e) => return Err(e),
        };
        let solved = if exact {
            solve_exact(&model, inst)
        } else {
            solve(&model, inst)
        };
        match solved {
            Ok(solution) => {
                if extensions > 0 {
                    log::info!("grid extended by {extensions} interval(s) to reach feasibility");
                }
                return Ok(SolvedLp {
                    grid,
                    model,
                    solution,
                    extensions,
                });
            }
            Err(LpError::Simplex(SimplexError::Infeasible)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(LpError::InfeasibleAfterExtension(MAX_GRID_EXTENSIONS))
}

impl SolvedLp {
    /// Rebuilds grid and model from a saved solution and reloads its values.
    pub fn from_record(
        inst: &CoflowInstance,
        record: &SolutionRecord,
    ) -> Result<SolvedLp, LpError> {
        let base = build_grid(&time_horizon(inst), &record.eta.0)?;
        if record.count < base.count() {
            return Err(LpError::Record(format!(
                "solution has L = {} but the instance needs at least {}",
                record.count,
                base.count()
            )));
        }
        let extensions = record.count - base.count();
        let grid = base.extended(extensions);
        let model = build_model(inst, &grid, record.objective_kind)?;
        let solution = LpSolution::from_record(&model, inst, record)?;
        Ok(SolvedLp {
            grid,
            model,
            solution,
            extensions,
        })
    }
}

// ---------------------------------------------------------------------------
// Solution files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub p: usize,
    pub l: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub objective_kind: ObjectiveKind,
    pub eta: Number,
    #[serde(rename = "L")]
    pub count: usize,
    pub objective: f64,
    pub y: Vec<YRecord>,
    #[serde(rename = "C")]
    pub coflow_completion: BTreeMap<String, f64>,
    #[serde(rename = "Cmax")]
    pub makespan: f64,
}

impl LpSolution {
    pub fn to_record(&self, inst: &CoflowInstance, grid: &IntervalGrid) -> SolutionRecord {
        let ports = inst.ports();
        let y = self
            .vars
            .iter()
            .enumerate()
            .filter(|(v, _)| self.values[*v] != 0.0)
            .map(|(v, key)| {
                let fk = inst.flow(key.flow).key;
                YRecord {
                    i: fk.src,
                    j: fk.dst - ports,
                    k: fk.coflow,
                    p: key.core + 1,
                    l: key.interval,
                    value: self.values[v],
                }
            })
            .collect();
        SolutionRecord {
            objective_kind: self.kind,
            eta: Number(grid.eta().clone()),
            count: grid.count(),
            objective: self.objective,
            y,
            coflow_completion: self
                .coflow_completion
                .iter()
                .enumerate()
                .map(|(k, c)| ((k + 1).to_string(), *c))
                .collect(),
            makespan: self.makespan,
        }
    }

    /// Rebuilds a solution from its record against a model built on the same
    /// instance and grid. Objective and completions are recomputed.
    pub fn from_record(
        model: &LpModel,
        inst: &CoflowInstance,
        record: &SolutionRecord,
    ) -> Result<LpSolution, LpError> {
        if record.objective_kind != model.kind {
            return Err(LpError::Record(format!(
                "objective kind {} does not match model {}",
                record.objective_kind, model.kind
            )));
        }
        let mut values = vec![0.0; model.num_vars];
        for y in &record.y {
            let key = FlowKey::new(y.i, y.j + inst.ports(), y.k);
            let flow = inst
                .flow_index(key)
                .ok_or_else(|| LpError::Record(format!("unknown flow {key}")))?;
            if y.p == 0 {
                return Err(LpError::Record("core numbers start at 1".into()));
            }
            let v = model
                .var_index(VarKey {
                    flow,
                    core: y.p - 1,
                    interval: y.l,
                })
                .ok_or_else(|| {
                    LpError::Record(format!(
                        "no variable for flow {key} core {} interval {}",
                        y.p, y.l
                    ))
                })?;
            values[v] = y.value;
        }
        match model.kind {
            ObjectiveKind::WeightedCompletion => {
                for k in 0..inst.coflows().len() {
                    let c = record
                        .coflow_completion
                        .get(&(k + 1).to_string())
                        .ok_or_else(|| {
                            LpError::Record(format!("missing C for coflow {}", k + 1))
                        })?;
                    values[model.aux_start + k] = *c;
                }
            }
            ObjectiveKind::Makespan => values[model.aux_start] = record.makespan,
        }
        let sol = LpSolution::from_values(model, values, None, inst.coflows().len());
        if (sol.objective - record.objective).abs() > 1e-6 * (1.0 + record.objective.abs()) {
            return Err(LpError::Record(format!(
                "recorded objective {} disagrees with recomputed {}",
                record.objective, sol.objective
            )));
        }
        Ok(sol)
    }
}
