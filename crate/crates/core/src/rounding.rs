//! Rounding a fractional LP solution into one `(core, interval)` per flow.
//!
//! Randomized rounding samples each flow independently from its LP
//! distribution. Deterministic rounding fixes flows one at a time in the
//! total order, each time picking the pair that minimizes a pessimistic
//! estimator of the objective.
//!
//! Every estimator below is built from one quantity: the expected work that
//! competitor `f'` (a flow sharing the input or output port of `g`) puts ahead
//! of `g` on core `p` when `g` sits in interval `ℓ`. "Ahead" means an earlier
//! interval, or the same interval and a smaller flow index. An assigned
//! competitor contributes `d'/s_p` if it is ahead; an unassigned one
//! contributes `Σ prob·d'/s_p` over the pairs of its distribution that are
//! ahead, which equals the LP term `y'·|I_t|`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{CoflowInstance, FlowKey};
use crate::lp::{LpSolution, ObjectiveKind};
use crate::rational::{self, Rational};
use crate::timegrid::IntervalGrid;

/// Pairs with smaller rounding probability are left out of the support.
pub const SUPPORT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoundingMode {
    #[serde(rename = "deterministic", alias = "det")]
    Deterministic,
    #[serde(rename = "randomized", alias = "rand")]
    Randomized,
}

impl std::fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoundingMode::Deterministic => "deterministic",
            RoundingMode::Randomized => "randomized",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RoundingError {
    #[error("epsilon must be positive (got {0})")]
    NonPositiveEpsilon(String),
    #[error("flow {0} has an empty rounding distribution")]
    EmptyDistribution(FlowKey),
    #[error("interval {interval} is not eligible for flow {flow}")]
    NotEligible { flow: FlowKey, interval: usize },
    #[error("flow {0} is already assigned")]
    AlreadyAssigned(FlowKey),
    #[error("flow {0} is not assigned")]
    NotAssigned(FlowKey),
    #[error("assignment does not match instance: {0}")]
    Mismatch(String),
}

/// `η = ε` for randomized rounding, `η = ε/2` for deterministic rounding.
pub fn eta_from_epsilon(epsilon: &Rational, mode: RoundingMode) -> Result<Rational, RoundingError> {
    if epsilon <= &rational::int(0) {
        return Err(RoundingError::NonPositiveEpsilon(
            rational::format_rational(epsilon),
        ));
    }
    Ok(match mode {
        RoundingMode::Randomized => epsilon.clone(),
        RoundingMode::Deterministic => epsilon / rational::int(2),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowChoice {
    pub core: usize,
    pub interval: usize,
    /// Priority stamp: the true left endpoint of the interval.
    pub stamp: f64,
    /// Secondary priority within an interval; 0 in deterministic mode.
    pub tie: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub mode: RoundingMode,
    pub seed: Option<u64>,
    pub eta: f64,
    pub choices: Vec<FlowChoice>,
}

impl Assignment {
    pub fn core_of(&self, flow: usize) -> usize {
        self.choices[flow].core
    }

    pub fn interval_of(&self, flow: usize) -> usize {
        self.choices[flow].interval
    }

    /// The 0/1 indicator `x[f, p, ℓ]`.
    pub fn indicator(&self, flow: usize, core: usize, interval: usize) -> bool {
        let c = &self.choices[flow];
        c.core == core && c.interval == interval
    }

    /// Total priority order used by list scheduling: interval, tie, flow index.
    pub fn priority_key(&self, flow: usize) -> (usize, u64, usize) {
        let c = &self.choices[flow];
        (c.interval, c.tie, flow)
    }

    /// Flows per core, in priority order.
    pub fn per_core(&self, cores: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); cores];
        for (f, c) in self.choices.iter().enumerate() {
            out[c.core].push(f);
        }
        for list in &mut out {
            list.sort_by_key(|&f| self.priority_key(f));
        }
        out
    }

    /// Checks coverage, core range and interval eligibility.
    pub fn check(&self, inst: &CoflowInstance, grid: &IntervalGrid) -> Result<(), RoundingError> {
        if self.choices.len() != inst.flows().len() {
            return Err(RoundingError::Mismatch(format!(
                "{} choices for {} flows",
                self.choices.len(),
                inst.flows().len()
            )));
        }
        for (f, c) in self.choices.iter().enumerate() {
            if c.core >= inst.cores() {
                return Err(RoundingError::Mismatch(format!(
                    "flow {} assigned to core {} of {}",
                    inst.flow(f).key,
                    c.core + 1,
                    inst.cores()
                )));
            }
            if !grid.is_eligible(c.interval, inst.release_of(f)) {
                return Err(RoundingError::NotEligible {
                    flow: inst.flow(f).key,
                    interval: c.interval,
                });
            }
        }
        Ok(())
    }

    pub fn to_record(&self, inst: &CoflowInstance, epsilon: f64) -> AssignmentRecord {
        let ports = inst.ports();
        AssignmentRecord {
            mode: self.mode,
            seed: self.seed,
            epsilon,
            eta: self.eta,
            flows: self
                .choices
                .iter()
                .enumerate()
                .map(|(f, c)| {
                    let key = inst.flow(f).key;
                    ChoiceRecord {
                        i: key.src,
                        j: key.dst - ports,
                        k: key.coflow,
                        p: c.core + 1,
                        l: c.interval,
                        t: c.stamp,
                        tie: (self.mode == RoundingMode::Randomized).then_some(c.tie),
                    }
                })
                .collect(),
        }
    }

    pub fn from_record(
        record: &AssignmentRecord,
        inst: &CoflowInstance,
    ) -> Result<Assignment, RoundingError> {
        let mut choices: Vec<Option<FlowChoice>> = vec![None; inst.flows().len()];
        for c in &record.flows {
            let key = FlowKey::new(c.i, c.j + inst.ports(), c.k);
            let f = inst
                .flow_index(key)
                .ok_or_else(|| RoundingError::Mismatch(format!("unknown flow {key}")))?;
            if choices[f].is_some() {
                return Err(RoundingError::AlreadyAssigned(key));
            }
            if c.p == 0 {
                return Err(RoundingError::Mismatch("core numbers start at 1".into()));
            }
            choices[f] = Some(FlowChoice {
                core: c.p - 1,
                interval: c.l,
                stamp: c.t,
                tie: c.tie.unwrap_or(0),
            });
        }
        let choices = choices
            .into_iter()
            .enumerate()
            .map(|(f, c)| c.ok_or(RoundingError::NotAssigned(inst.flow(f).key)))
            .collect::<Result<_, _>>()?;
        Ok(Assignment {
            mode: record.mode,
            seed: record.seed,
            eta: record.eta,
            choices,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub p: usize,
    pub l: usize,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub mode: RoundingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub epsilon: f64,
    pub eta: f64,
    pub flows: Vec<ChoiceRecord>,
}

// ---------------------------------------------------------------------------
// Distributions

/// One support point of a flow's rounding distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportPoint {
    pub core: usize,
    pub interval: usize,
    pub prob: f64,
}

/// Per-flow rounding distributions with tiny entries dropped and the rest
/// renormalized to sum to one. Points are ordered by `(core, interval)`.
#[derive(Clone, Debug)]
pub struct Distributions {
    support: Vec<Vec<SupportPoint>>,
}

impl Distributions {
    pub fn from_solution(sol: &LpSolution, inst: &CoflowInstance) -> Result<Self, RoundingError> {
        let mut support = Vec::with_capacity(sol.flows());
        for f in 0..sol.flows() {
            let mut points: Vec<SupportPoint> = sol
                .distribution(f)
                .into_iter()
                .filter(|&(_, _, p)| p > SUPPORT_TOL)
                .map(|(core, interval, prob)| SupportPoint {
                    core,
                    interval,
                    prob,
                })
                .collect();
            let mass: f64 = points.iter().map(|p| p.prob).sum();
            if points.is_empty() || mass <= 0.0 {
                return Err(RoundingError::EmptyDistribution(inst.flow(f).key));
            }
            for p in &mut points {
                p.prob /= mass;
            }
            points.sort_by_key(|p| (p.core, p.interval));
            support.push(points);
        }
        Ok(Distributions { support })
    }

    pub fn of(&self, flow: usize) -> &[SupportPoint] {
        &self.support[flow]
    }

    pub fn flows(&self) -> usize {
        self.support.len()
    }

    /// Number of joint outcomes, saturating.
    pub fn outcome_count(&self) -> usize {
        self.support
            .iter()
            .fold(1usize, |acc, s| acc.saturating_mul(s.len()))
    }
}

pub fn sample_assignment(
    sol: &LpSolution,
    inst: &CoflowInstance,
    grid: &IntervalGrid,
    seed: u64,
) -> Result<Assignment, RoundingError> {
    let dist = Distributions::from_solution(sol, inst)?;
    Ok(sample_from(&dist, grid, seed))
}

pub fn sample_from(dist: &Distributions, grid: &IntervalGrid, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices = (0..dist.flows())
        .map(|f| {
            let points = dist.of(f);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = points[points.len() - 1];
            for p in points {
                acc += p.prob;
                if u < acc {
                    pick = *p;
                    break;
                }
            }
            FlowChoice {
                core: pick.core,
                interval: pick.interval,
                stamp: grid.left_f64(pick.interval),
                tie: rng.gen(),
            }
        })
        .collect();
    Assignment {
        mode: RoundingMode::Randomized,
        seed: Some(seed),
        eta: rational::to_f64(grid.eta()),
        choices,
    }
}

// ---------------------------------------------------------------------------
// Estimators, evaluated from scratch

/// Flows fixed so far, indexed by flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialState {
    pub assigned: Vec<Option<(usize, usize)>>,
}

impl PartialState {
    pub fn empty(flows: usize) -> Self {
        PartialState {
            assigned: vec![None; flows],
        }
    }

    pub fn assign(&mut self, flow: usize, core: usize, interval: usize) {
        self.assigned[flow] = Some((core, interval));
    }

    pub fn is_assigned(&self, flow: usize) -> bool {
        self.assigned[flow].is_some()
    }
}

/// Shared context for estimator evaluation.
pub struct EstimatorContext<'a> {
    inst: &'a CoflowInstance,
    grid: &'a IntervalGrid,
    dist: &'a Distributions,
    competitors: Vec<Vec<usize>>,
    sizes: Vec<f64>,
    speeds: Vec<f64>,
}

impl<'a> EstimatorContext<'a> {
    pub fn new(inst: &'a CoflowInstance, grid: &'a IntervalGrid, dist: &'a Distributions) -> Self {
        EstimatorContext {
            inst,
            grid,
            dist,
            competitors: (0..inst.flows().len())
                .map(|f| inst.competitors(f))
                .collect(),
            sizes: inst.flows().iter().map(|f| f.size as f64).collect(),
            speeds: (0..inst.cores()).map(|p| inst.speed_f64(p)).collect(),
        }
    }

    fn base(&self, interval: usize) -> f64 {
        if interval == 0 {
            0.0
        } else {
            self.grid.notational_left_f64(interval)
        }
    }

    /// Is `other` at `(core, t)` ahead of `g` at `(core, interval)`?
    fn ahead(other: usize, t: usize, g: usize, interval: usize) -> bool {
        t < interval || (t == interval && other < g)
    }

    /// Work of an unassigned competitor expected ahead of `g` at `(p, ℓ)`.
    fn unassigned_contribution(&self, other: usize, g: usize, core: usize, interval: usize) -> f64 {
        let work = self.sizes[other] / self.speeds[core];
        self.dist
            .of(other)
            .iter()
            .filter(|s| s.core == core && Self::ahead(other, s.interval, g, interval))
            .map(|s| s.prob * work)
            .sum()
    }

    fn assigned_contribution(
        &self,
        other: usize,
        at: (usize, usize),
        g: usize,
        core: usize,
        interval: usize,
    ) -> f64 {
        if at.0 == core && Self::ahead(other, at.1, g, interval) {
            self.sizes[other] / self.speeds[core]
        } else {
            0.0
        }
    }

    fn value_at(&self, g: usize, core: usize, interval: usize, state: &PartialState) -> f64 {
        let mut total = self.base(interval) + self.sizes[g] / self.speeds[core];
        for &other in &self.competitors[g] {
            total += match state.assigned[other] {
                Some(at) => self.assigned_contribution(other, at, g, core, interval),
                None => self.unassigned_contribution(other, g, core, interval),
            };
        }
        total
    }

    fn check_eligible(&self, g: usize, interval: usize) -> Result<(), RoundingError> {
        if self.grid.is_eligible(interval, self.inst.release_of(g)) {
            Ok(())
        } else {
            Err(RoundingError::NotEligible {
                flow: self.inst.flow(g).key,
                interval,
            })
        }
    }

    /// Estimated completion time of unassigned flow `g` if placed at `(core, interval)`.
    pub fn estimator_d(
        &self,
        g: usize,
        core: usize,
        interval: usize,
        state: &PartialState,
    ) -> Result<f64, RoundingError> {
        if state.is_assigned(g) {
            return Err(RoundingError::AlreadyAssigned(self.inst.flow(g).key));
        }
        self.check_eligible(g, interval)?;
        Ok(self.value_at(g, core, interval, state))
    }

    /// Estimated completion time of assigned flow `g` at its fixed pair.
    pub fn estimator_e(&self, g: usize, state: &PartialState) -> Result<f64, RoundingError> {
        let (core, interval) =
            state.assigned[g].ok_or(RoundingError::NotAssigned(self.inst.flow(g).key))?;
        self.check_eligible(g, interval)?;
        Ok(self.value_at(g, core, interval, state))
    }

    /// `Σ prob·D` for an unassigned flow, `E` for an assigned one.
    pub fn flow_value(&self, g: usize, state: &PartialState) -> f64 {
        match state.assigned[g] {
            Some((core, interval)) => self.value_at(g, core, interval, state),
            None => self
                .dist
                .of(g)
                .iter()
                .map(|s| s.prob * self.value_at(g, s.core, s.interval, state))
                .sum(),
        }
    }

    /// `Σ_k w_k · max(A_k, B_k)`.
    pub fn cond_exp_total_wct(&self, state: &PartialState) -> f64 {
        let values: Vec<f64> = (0..self.sizes.len())
            .map(|g| self.flow_value(g, state))
            .collect();
        self.inst
            .coflows()
            .iter()
            .map(|c| {
                let worst = c
                    .flows
                    .iter()
                    .map(|&g| values[g])
                    .fold(f64::NEG_INFINITY, f64::max);
                rational::to_f64(&c.weight) * worst
            })
            .sum()
    }

    pub fn cond_exp_makespan(&self, state: &PartialState) -> f64 {
        (0..self.sizes.len())
            .map(|g| self.flow_value(g, state))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn objective(&self, kind: ObjectiveKind, state: &PartialState) -> f64 {
        match kind {
            ObjectiveKind::WeightedCompletion => self.cond_exp_total_wct(state),
            ObjectiveKind::Makespan => self.cond_exp_makespan(state),
        }
    }
}

// ---------------------------------------------------------------------------
// Derandomization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub p: usize,
    pub l: usize,
    pub prob: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub flow: [usize; 3],
    pub candidates: Vec<CandidateRecord>,
    pub chosen: [usize; 2],
    pub parent: f64,
    pub average: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub steps: Vec<StepRecord>,
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
}

impl EstimatorReport {
    /// JSON lines, one record per greedy step.
    pub fn to_json_lines(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("step records serialize") + "\n")
            .collect()
    }

    /// Largest `chosen − average` over all steps.
    pub fn worst_descent_gap(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                let chosen = s
                    .candidates
                    .iter()
                    .find(|c| [c.p, c.l] == s.chosen)
                    .map_or(f64::INFINITY, |c| c.value);
                chosen - s.average
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Incremental estimator state: `D` for every support point of every flow,
/// the per-flow values and the per-coflow maxima.
struct Incremental<'c, 'a> {
    ctx: &'c EstimatorContext<'a>,
    kind: ObjectiveKind,
    state: PartialState,
    /// `table[g][s]` = estimator value of `g` at its `s`-th support point.
    table: Vec<Vec<f64>>,
    /// Index into the support of the chosen point, once assigned.
    chosen: Vec<Option<usize>>,
    values: Vec<f64>,
    weights: Vec<f64>,
    coflow_of: Vec<usize>,
}

impl<'c, 'a> Incremental<'c, 'a> {
    fn new(ctx: &'c EstimatorContext<'a>, kind: ObjectiveKind) -> Self {
        let n = ctx.sizes.len();
        let state = PartialState::empty(n);
        let table: Vec<Vec<f64>> = (0..n)
            .map(|g| {
                ctx.dist
                    .of(g)
                    .iter()
                    .map(|s| ctx.value_at(g, s.core, s.interval, &state))
                    .collect()
            })
            .collect();
        let mut inc = Incremental {
            ctx,
            kind,
            state,
            values: vec![0.0; n],
            table,
            chosen: vec![None; n],
            weights: ctx
                .inst
                .coflows()
                .iter()
                .map(|c| rational::to_f64(&c.weight))
                .collect(),
            coflow_of: ctx.inst.flows().iter().map(|f| f.key.coflow - 1).collect(),
        };
        for g in 0..n {
            inc.values[g] = inc.value_from_table(g, &inc.table[g], inc.chosen[g]);
        }
        inc
    }

    fn value_from_table(&self, g: usize, row: &[f64], chosen: Option<usize>) -> f64 {
        match chosen {
            Some(s) => row[s],
            None => self
                .ctx
                .dist
                .of(g)
                .iter()
                .zip(row)
                .map(|(s, v)| s.prob * v)
                .sum(),
        }
    }

    /// Change in `g`'s table row if `f` is fixed at `(core, interval)`.
    fn row_delta(&self, g: usize, f: usize, core: usize, interval: usize) -> Vec<f64> {
        self.ctx
            .dist
            .of(g)
            .iter()
            .map(|s| {
                let before = self.ctx.unassigned_contribution(f, g, s.core, s.interval);
                let after =
                    self.ctx
                        .assigned_contribution(f, (core, interval), g, s.core, s.interval);
                after - before
            })
            .collect()
    }

    fn total_with(&self, overrides: &[(usize, f64)]) -> f64 {
        match self.kind {
            ObjectiveKind::Makespan => {
                let mut best = f64::NEG_INFINITY;
                for (g, v) in self.values.iter().enumerate() {
                    let v = overrides
                        .iter()
                        .find(|(h, _)| *h == g)
                        .map_or(*v, |(_, o)| *o);
                    best = best.max(v);
                }
                best
            }
            ObjectiveKind::WeightedCompletion => {
                let touched: BTreeSet<usize> =
                    overrides.iter().map(|(g, _)| self.coflow_of[*g]).collect();
                let mut total = self.total();
                for k in touched {
                    let flows = &self.ctx.inst.coflows()[k].flows;
                    let old = flows
                        .iter()
                        .map(|&g| self.values[g])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let new = flows
                        .iter()
                        .map(|&g| {
                            overrides
                                .iter()
                                .find(|(h, _)| *h == g)
                                .map_or(self.values[g], |(_, o)| *o)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    total += self.weights[k] * (new - old);
                }
                total
            }
        }
    }

    fn total(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Makespan => self
                .values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            ObjectiveKind::WeightedCompletion => self
                .ctx
                .inst
                .coflows()
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    self.weights[k]
                        * c.flows
                            .iter()
                            .map(|&g| self.values[g])
                            .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum(),
        }
    }

    /// Per-flow values after fixing `f` at support point `s`, for `f` and its competitors.
    fn child_overrides(&self, f: usize, s: usize) -> (Vec<(usize, f64)>, Vec<Vec<f64>>) {
        let point = self.ctx.dist.of(f)[s];
        let mut overrides = vec![(f, self.table[f][s])];
        let mut deltas = Vec::with_capacity(self.ctx.competitors[f].len());
        for &g in &self.ctx.competitors[f] {
            let delta = self.row_delta(g, f, point.core, point.interval);
            let row: Vec<f64> = self.table[g]
                .iter()
                .zip(&delta)
                .map(|(a, b)| a + b)
                .collect();
            overrides.push((g, self.value_from_table(g, &row, self.chosen[g])));
            deltas.push(delta);
        }
        (overrides, deltas)
    }

    fn commit(&mut self, f: usize, s: usize) {
        let (overrides, deltas) = self.child_overrides(f, s);
        for (&g, delta) in self.ctx.competitors[f].iter().zip(deltas) {
            for (a, b) in self.table[g].iter_mut().zip(delta) {
                *a += b;
            }
        }
        let point = self.ctx.dist.of(f)[s];
        self.chosen[f] = Some(s);
        self.state.assign(f, point.core, point.interval);
        for (g, v) in overrides {
            self.values[g] = v;
        }
    }
}

fn derandomize(
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
    kind: ObjectiveKind,
) -> Result<(Assignment, EstimatorReport), RoundingError> {
    let dist = Distributions::from_solution(sol, inst)?;
    let ctx = EstimatorContext::new(inst, grid, &dist);
    let mut inc = Incremental::new(&ctx, kind);
    let initial = inc.total();
    let mut steps = Vec::with_capacity(inst.flows().len());
    // flows are stored in the total order
    for f in 0..inst.flows().len() {
        let parent = inc.total();
        let mut candidates = Vec::with_capacity(dist.of(f).len());
        let mut best: Option<(usize, f64)> = None;
        let mut average = 0.0;
        for (s, point) in dist.of(f).iter().enumerate() {
            let (overrides, _) = inc.child_overrides(f, s);
            let value = inc.total_with(&overrides);
            average += point.prob * value;
            // support is sorted by (core, interval): strict < keeps the smallest pair on ties
            if best.is_none_or(|(_, b)| value < b) {
                best = Some((s, value));
            }
            candidates.push(CandidateRecord {
                p: point.core + 1,
                l: point.interval,
                prob: point.prob,
                value,
            });
        }
        let (s, _) = best.ok_or(RoundingError::EmptyDistribution(inst.flow(f).key))?;
        inc.commit(f, s);
        let key = inst.flow(f).key;
        let point = dist.of(f)[s];
        steps.push(StepRecord {
            step: f + 1,
            flow: [key.src, key.dst - inst.ports(), key.coflow],
            candidates,
            chosen: [point.core + 1, point.interval],
            parent,
            average,
        });
    }
    let final_value = inc.total();
    let choices = inc
        .state
        .assigned
        .iter()
        .map(|a| {
            let (core, interval) = a.expect("every flow assigned");
            FlowChoice {
                core,
                interval,
                stamp: grid.left_f64(interval),
                tie: 0,
            }
        })
        .collect();
    Ok((
        Assignment {
            mode: RoundingMode::Deterministic,
            seed: None,
            eta: rational::to_f64(grid.eta()),
            choices,
        },
        EstimatorReport {
            steps,
            initial,
            final_value,
        },
    ))
}

pub fn derandomize_wct(
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
) -> Result<(Assignment, EstimatorReport), RoundingError> {
    derandomize(sol, grid, inst, ObjectiveKind::WeightedCompletion)
}

pub fn derandomize_makespan(
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
) -> Result<(Assignment, EstimatorReport), RoundingError> {
    derandomize(sol, grid, inst, ObjectiveKind::Makespan)
}

pub fn derandomize_for(
    kind: ObjectiveKind,
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
) -> Result<(Assignment, EstimatorReport), RoundingError> {
    derandomize(sol, grid, inst, kind)
}

/// Replays a derandomized assignment from scratch, returning the final
/// estimator value. Used to cross-check the incremental bookkeeping.
pub fn replay_estimator(
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
    assignment: &Assignment,
    kind: ObjectiveKind,
) -> Result<f64, RoundingError> {
    let dist = Distributions::from_solution(sol, inst)?;
    let ctx = EstimatorContext::new(inst, grid, &dist);
    let mut state = PartialState::empty(inst.flows().len());
    for (f, c) in assignment.choices.iter().enumerate() {
        state.assign(f, c.core, c.interval);
    }
    Ok(ctx.objective(kind, &state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse;
    use crate::lp::{solve_instance, SolvedLp};
    use crate::rational::{int, ratio};
    use std::path::Path;

    fn instance(text: &str) -> CoflowInstance {
        parse(text, Path::new("t")).unwrap()
    }

    fn single_flow() -> CoflowInstance {
        instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        )
    }

    fn solved(inst: &CoflowInstance, kind: ObjectiveKind) -> SolvedLp {
        solve_instance(inst, &int(1), kind, false).unwrap()
    }

    #[test]
    fn eta_choice_per_mode() {
        assert_eq!(
            eta_from_epsilon(&int(1), RoundingMode::Randomized).unwrap(),
            int(1)
        );
        assert_eq!(
            eta_from_epsilon(&int(1), RoundingMode::Deterministic).unwrap(),
            ratio(1, 2)
        );
        assert!(eta_from_epsilon(&int(0), RoundingMode::Randomized).is_err());
        assert!(eta_from_epsilon(&int(-1), RoundingMode::Deterministic).is_err());
    }

    #[test]
    fn single_flow_estimators() {
        let inst = single_flow();
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let probs: Vec<_> = dist
            .of(0)
            .iter()
            .map(|p| (p.core, p.interval, p.prob))
            .collect();
        assert_eq!(probs.len(), 2);
        assert!((probs[0].2 - 0.5).abs() < 1e-9 && (probs[1].2 - 0.5).abs() < 1e-9);

        let ctx = EstimatorContext::new(&inst, &s.grid, &dist);
        let mut state = PartialState::empty(1);
        assert!((ctx.estimator_d(0, 0, 0, &state).unwrap() - 2.0).abs() < 1e-12);
        assert!((ctx.estimator_d(0, 0, 1, &state).unwrap() - 3.0).abs() < 1e-12);
        assert!((ctx.cond_exp_total_wct(&state) - 2.5).abs() < 1e-12);
        assert!(ctx.estimator_e(0, &state).is_err());
        state.assign(0, 0, 0);
        assert!((ctx.estimator_e(0, &state).unwrap() - 2.0).abs() < 1e-12);
        assert!((ctx.cond_exp_total_wct(&state) - 2.0).abs() < 1e-12);
        assert!(ctx.estimator_d(0, 0, 0, &state).is_err());
    }

    #[test]
    fn d_rejects_ineligible_interval() {
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 2, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let ctx = EstimatorContext::new(&inst, &s.grid, &dist);
        let state = PartialState::empty(1);
        assert!(matches!(
            ctx.estimator_d(0, 0, 0, &state),
            Err(RoundingError::NotEligible { .. })
        ));
    }

    #[test]
    fn derandomized_single_flow() {
        let inst = single_flow();
        for kind in [ObjectiveKind::WeightedCompletion, ObjectiveKind::Makespan] {
            let s = solved(&inst, kind);
            let (a, report) = derandomize_for(kind, &s.solution, &s.grid, &inst).unwrap();
            assert_eq!((a.core_of(0), a.interval_of(0)), (0, 0));
            assert_eq!(a.choices[0].stamp, 0.0);
            assert!((report.final_value - 2.0).abs() < 1e-12);
            assert!((report.initial - 2.5).abs() < 1e-12);
            let step = &report.steps[0];
            assert_eq!(step.chosen, [1, 0]);
            assert!((step.average - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn smaller_order_competitor_counts_at_same_interval() {
        // (1,2,1) < (1,3,1) in the flow order; both leave input port 1
        let inst = instance(
            r#"{"N": 3, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 2, "size": 2}, {"src": 1, "dst": 3, "size": 3}]}]}"#,
        );
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let ctx = EstimatorContext::new(&inst, &s.grid, &dist);
        let state = PartialState::empty(2);
        let y_first_at_0: f64 = dist
            .of(0)
            .iter()
            .filter(|p| p.core == 0 && p.interval == 0)
            .map(|p| p.prob * 2.0)
            .sum();
        let d_second = ctx.estimator_d(1, 0, 0, &state).unwrap();
        assert!((d_second - (3.0 + y_first_at_0)).abs() < 1e-12);
        // the larger-order flow is not ahead of the smaller one at the same interval
        let d_first = ctx.estimator_d(0, 0, 0, &state).unwrap();
        assert!((d_first - 2.0).abs() < 1e-12);
    }

    fn released_batch() -> Vec<CoflowInstance> {
        use crate::instance::{generate_random, GeneratorParams};
        (0..12)
            .map(|seed| {
                generate_random(&GeneratorParams {
                    ports: 3,
                    cores: 2,
                    coflows: 3,
                    speed_set: vec![1, 2],
                    size_range: (2, 12),
                    release_range: (0, 4),
                    weight_range: (1, 4),
                    density: 0.5,
                    seed,
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn incremental_matches_direct_evaluation() {
        for inst in released_batch() {
            for kind in [ObjectiveKind::WeightedCompletion, ObjectiveKind::Makespan] {
                let s = solved(&inst, kind);
                let (a, report) = derandomize_for(kind, &s.solution, &s.grid, &inst).unwrap();
                a.check(&inst, &s.grid).unwrap();
                let direct = replay_estimator(&s.solution, &s.grid, &inst, &a, kind).unwrap();
                assert!((direct - report.final_value).abs() < 1e-9 * (1.0 + direct));

                // each child value agrees with a from-scratch evaluation
                let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
                let ctx = EstimatorContext::new(&inst, &s.grid, &dist);
                let mut state = PartialState::empty(inst.flows().len());
                for (f, step) in report.steps.iter().enumerate() {
                    assert!(
                        (ctx.objective(kind, &state) - step.parent).abs()
                            < 1e-9 * (1.0 + step.parent)
                    );
                    for c in &step.candidates {
                        let mut child = state.clone();
                        child.assign(f, c.p - 1, c.l);
                        let v = ctx.objective(kind, &child);
                        assert!((v - c.value).abs() < 1e-9 * (1.0 + v), "{v} vs {}", c.value);
                    }
                    state.assign(f, step.chosen[0] - 1, step.chosen[1]);
                }
                assert!(report.worst_descent_gap() <= 1e-9);
            }
        }
    }

    #[test]
    fn integral_solution_is_reproduced() {
        // a single eligible interval on a single core forces integrality
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 3, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        assert_eq!(dist.of(0).len(), 1);
        let (a, _) = derandomize_wct(&s.solution, &s.grid, &inst).unwrap();
        assert_eq!(
            (a.core_of(0), a.interval_of(0)),
            (dist.of(0)[0].core, dist.of(0)[0].interval)
        );
        for seed in 0..20 {
            let r = sample_assignment(&s.solution, &inst, &s.grid, seed).unwrap();
            assert_eq!(r.interval_of(0), a.interval_of(0));
        }
    }

    #[test]
    fn sampling_frequency_matches_half() {
        let inst = single_flow();
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let hits = (0..10_000u64)
            .filter(|&seed| sample_from(&dist, &s.grid, seed).interval_of(0) == 0)
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "{freq}");
    }

    #[test]
    fn sampling_is_seeded() {
        let inst = released_batch().remove(3);
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let a = sample_assignment(&s.solution, &inst, &s.grid, 99).unwrap();
        let b = sample_assignment(&s.solution, &inst, &s.grid, 99).unwrap();
        assert_eq!(a, b);
        a.check(&inst, &s.grid).unwrap();
    }

    #[test]
    fn sampling_marginals_converge() {
        let inst = released_batch().remove(5);
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let samples = 10_000;
        let draws: Vec<Assignment> = (0..samples)
            .map(|seed| sample_from(&dist, &s.grid, seed))
            .collect();
        for f in 0..inst.flows().len() {
            for p in dist.of(f) {
                let hits = draws
                    .iter()
                    .filter(|a| a.indicator(f, p.core, p.interval))
                    .count() as f64;
                let freq = hits / samples as f64;
                let sd = (p.prob * (1.0 - p.prob) / samples as f64).sqrt();
                assert!(
                    (freq - p.prob).abs() <= 5.0 * sd + 1e-3,
                    "flow {f}: {freq} vs {}",
                    p.prob
                );
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let inst = released_batch().remove(1);
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        for a in [
            derandomize_wct(&s.solution, &s.grid, &inst).unwrap().0,
            sample_assignment(&s.solution, &inst, &s.grid, 5).unwrap(),
        ] {
            let record = a.to_record(&inst, 1.0);
            let text = serde_json::to_string(&record).unwrap();
            let back: AssignmentRecord = serde_json::from_str(&text).unwrap();
            assert_eq!(Assignment::from_record(&back, &inst).unwrap(), a);
        }
    }

    #[test]
    fn per_core_lists_partition_flows() {
        let inst = released_batch().remove(2);
        let s = solved(&inst, ObjectiveKind::WeightedCompletion);
        let a = sample_assignment(&s.solution, &inst, &s.grid, 1).unwrap();
        let lists = a.per_core(inst.cores());
        let mut all: Vec<usize> = lists.concat();
        all.sort();
        assert_eq!(all, (0..inst.flows().len()).collect::<Vec<_>>());
        for list in &lists {
            assert!(list
                .windows(2)
                .all(|w| a.priority_key(w[0]) < a.priority_key(w[1])));
        }
    }
}
