//! Ground truth at tiny scale and ratio reporting.
//!
//! [`brute_force_opt`] searches every quantized preemptive schedule in which
//! each flow stays on one core. [`enumerate_randomized`] computes the exact
//! expectation of randomized rounding by simulating every outcome.

use std::collections::HashMap;
use std::time::Instant;

use num::{BigInt, Integer, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::CoflowInstance;
use crate::lp::{LpSolution, ObjectiveKind};
use crate::rational::{self, Rational};
use crate::rounding::{Assignment, Distributions, FlowChoice, RoundingError, RoundingMode};
use crate::simulator::{list_schedule, objective_values, SimError};
use crate::timegrid::IntervalGrid;

pub const MAX_BRUTE_FORCE_FLOWS: usize = 4;
pub const MAX_BRUTE_FORCE_COFLOWS: usize = 3;
pub const DEFAULT_STATE_BUDGET: usize = 2_000_000;
pub const MAX_OUTCOMES: usize = 10_000;
pub const MAX_TIE_ORDERS: usize = 720;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for brute force: {0}")]
    TooLarge(String),
    #[error("quantum {quantum} does not divide {what}")]
    Quantum { quantum: String, what: String },
    #[error("state budget of {0} exceeded")]
    Budget(usize),
    #[error("{outcomes} rounding outcomes exceed the enumeration limit {limit}")]
    Outcomes { outcomes: usize, limit: usize },
    #[error("{orders} tie orders exceed the limit {limit}")]
    TieOrders { orders: usize, limit: usize },
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub value: Rational,
    pub quantum: Rational,
    pub states: usize,
}

/// `1/lcm(speeds)` when all speeds are integers.
pub fn default_quantum(inst: &CoflowInstance) -> Option<Rational> {
    let mut lcm = BigInt::one();
    for s in inst.speeds() {
        if !s.is_integer() {
            return None;
        }
        lcm = lcm.lcm(&s.to_integer());
    }
    Some(Rational::new(BigInt::one(), lcm))
}

fn ticks(value: &Rational, quantum: &Rational) -> Option<u32> {
    let q = value / quantum;
    q.is_integer().then(|| q.to_integer().to_u32()).flatten()
}

struct Search<'a> {
    inst: &'a CoflowInstance,
    kind: ObjectiveKind,
    weights: Vec<Rational>,
    release: Vec<u32>,
    last_release: u32,
    coflow_of: Vec<usize>,
    /// Maximal port-disjoint subsets by eligible mask.
    maximal: HashMap<u32, Vec<u32>>,
    cores_of: Vec<usize>,
    memo: HashMap<(u32, Vec<u16>), Rational>,
    budget: usize,
    explored: usize,
}

impl Search<'_> {
    fn maximal_sets(&mut self, eligible: u32) -> Vec<u32> {
        if let Some(v) = self.maximal.get(&eligible) {
            return v.clone();
        }
        let flows: Vec<usize> = (0..self.cores_of.len())
            .filter(|f| eligible >> f & 1 == 1)
            .collect();
        let disjoint = |mask: u32| {
            let mut used = Vec::new();
            for &f in &flows {
                if mask >> f & 1 == 1 {
                    let key = self.inst.flow(f).key;
                    if used.contains(&key.src) || used.contains(&key.dst) {
                        return false;
                    }
                    used.push(key.src);
                    used.push(key.dst);
                }
            }
            true
        };
        let mut sets = Vec::new();
        let mut mask = eligible;
        loop {
            if disjoint(mask)
                && flows
                    .iter()
                    .all(|&f| mask >> f & 1 == 1 || !disjoint(mask | 1 << f))
            {
                sets.push(mask);
            }
            if mask == 0 {
                break;
            }
            mask = (mask - 1) & eligible;
        }
        self.maximal.insert(eligible, sets.clone());
        sets
    }

    fn step_cost(&self, rem: &[u16]) -> Rational {
        match self.kind {
            ObjectiveKind::Makespan => Rational::one(),
            ObjectiveKind::WeightedCompletion => {
                let mut open = vec![false; self.weights.len()];
                for (f, r) in rem.iter().enumerate() {
                    if *r > 0 {
                        open[self.coflow_of[f]] = true;
                    }
                }
                open.iter()
                    .zip(&self.weights)
                    .filter(|(o, _)| **o)
                    .map(|(_, w)| w.clone())
                    .sum()
            }
        }
    }

    /// Remaining cost in units of quantum·weight from tick `t`.
    fn value(&mut self, t: u32, rem: Vec<u16>) -> Result<Rational, OracleError> {
        if rem.iter().all(|r| *r == 0) {
            return Ok(Rational::zero());
        }
        let key = (t.min(self.last_release), rem);
        if let Some(v) = self.memo.get(&key) {
            return Ok(v.clone());
        }
        self.explored += 1;
        if self.explored > self.budget {
            return Err(OracleError::Budget(self.budget));
        }
        let rem = key.1.clone();
        let cores = self.inst.cores();
        let mut per_core: Vec<Vec<u32>> = Vec::with_capacity(cores);
        for p in 0..cores {
            let eligible = (0..rem.len())
                .filter(|&f| self.cores_of[f] == p && rem[f] > 0 && self.release[f] <= t)
                .fold(0u32, |m, f| m | 1 << f);
            per_core.push(self.maximal_sets(eligible));
        }
        let cost = self.step_cost(&rem);
        let mut best: Option<Rational> = None;
        let mut choice = vec![0usize; cores];
        loop {
            let mut next = rem.clone();
            for p in 0..cores {
                let mask = per_core[p][choice[p]];
                for (f, r) in next.iter_mut().enumerate() {
                    if mask >> f & 1 == 1 {
                        *r -= 1;
                    }
                }
            }
            let v = self.value(t + 1, next)?;
            if best.as_ref().is_none_or(|b| &v < b) {
                best = Some(v);
            }
            // odometer over the per-core choices
            let mut p = 0;
            while p < cores {
                choice[p] += 1;
                if choice[p] < per_core[p].len() {
                    break;
                }
                choice[p] = 0;
                p += 1;
            }
            if p == cores {
                break;
            }
        }
        let total = cost + best.expect("at least the empty action exists");
        self.memo.insert(key, total.clone());
        Ok(total)
    }
}

/// Optimal objective over schedules that keep each flow on one core and
/// change decisions only at multiples of `quantum`.
pub fn brute_force_opt(
    inst: &CoflowInstance,
    kind: ObjectiveKind,
    quantum: Option<Rational>,
    budget: usize,
) -> Result<OptResult, OracleError> {
    let flows = inst.flows().len();
    if flows > MAX_BRUTE_FORCE_FLOWS || inst.coflows().len() > MAX_BRUTE_FORCE_COFLOWS {
        return Err(OracleError::TooLarge(format!(
            "{flows} flows, {} coflows",
            inst.coflows().len()
        )));
    }
    let quantum = match quantum {
        Some(q) => q,
        None => default_quantum(inst).ok_or_else(|| {
            OracleError::TooLarge("non-integer speeds need an explicit quantum".into())
        })?,
    };
    let q_text = rational::format_rational(&quantum);
    let mut release = Vec::with_capacity(flows);
    for f in 0..flows {
        release.push(
            ticks(inst.release_of(f), &quantum).ok_or_else(|| OracleError::Quantum {
                quantum: q_text.clone(),
                what: format!("the release of flow {}", inst.flow(f).key),
            })?,
        );
    }
    // units[f][p]: quanta needed on core p
    let mut units = vec![vec![0u16; inst.cores()]; flows];
    for (f, flow) in inst.flows().iter().enumerate() {
        for p in 0..inst.cores() {
            let work = Rational::from_integer(BigInt::from(flow.size)) / inst.speed(p);
            units[f][p] = ticks(&work, &quantum)
                .and_then(|u| u16::try_from(u).ok())
                .ok_or_else(|| OracleError::Quantum {
                    quantum: q_text.clone(),
                    what: format!(
                        "the transmission time of flow {} on core {}",
                        flow.key,
                        p + 1
                    ),
                })?;
        }
    }

    let cores = inst.cores();
    let combos = cores.pow(flows as u32);
    let mut best: Option<Rational> = None;
    let mut states = 0usize;
    for code in 0..combos {
        let mut cores_of = Vec::with_capacity(flows);
        let mut c = code;
        for _ in 0..flows {
            cores_of.push(c % cores);
            c /= cores;
        }
        let rem: Vec<u16> = (0..flows).map(|f| units[f][cores_of[f]]).collect();
        let mut search = Search {
            inst,
            kind,
            weights: inst.coflows().iter().map(|c| c.weight.clone()).collect(),
            release: release.clone(),
            last_release: release.iter().copied().max().unwrap_or(0),
            coflow_of: inst.flows().iter().map(|f| f.key.coflow - 1).collect(),
            maximal: HashMap::new(),
            cores_of,
            memo: HashMap::new(),
            budget: budget.saturating_sub(states),
            explored: 0,
        };
        let v = search.value(0, rem)?;
        states += search.explored;
        if best.as_ref().is_none_or(|b| &v < b) {
            best = Some(v);
        }
    }
    Ok(OptResult {
        value: best.expect("at least one core assignment") * &quantum,
        quantum,
        states,
    })
}

// ---------------------------------------------------------------------------
// Exact expectation of randomized rounding

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub wct: f64,
    pub makespan: f64,
    pub outcomes: usize,
    pub simulations: usize,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Exact `E[Σ w_k C_k]` and `E[C_max]` under randomized rounding: every joint
/// outcome of the per-flow distributions, and within each outcome every
/// relative order of flows sharing a `(core, interval)` group, is simulated
/// and weighted by its probability.
pub fn enumerate_randomized(
    sol: &LpSolution,
    grid: &IntervalGrid,
    inst: &CoflowInstance,
) -> Result<Expectation, OracleError> {
    let dist = Distributions::from_solution(sol, inst)?;
    let outcomes = dist.outcome_count();
    if outcomes > MAX_OUTCOMES {
        return Err(OracleError::Outcomes {
            outcomes,
            limit: MAX_OUTCOMES,
        });
    }
    let flows = inst.flows().len();
    let mut digits = vec![0usize; flows];
    let (mut wct, mut makespan) = (0.0, 0.0);
    let mut simulations = 0usize;
    let mut perm_cache: HashMap<usize, Vec<Vec<usize>>> = HashMap::new();
    for _ in 0..outcomes {
        let mut prob = 1.0;
        let mut choices = Vec::with_capacity(flows);
        for (f, &d) in digits.iter().enumerate() {
            let point = dist.of(f)[d];
            prob *= point.prob;
            choices.push(FlowChoice {
                core: point.core,
                interval: point.interval,
                stamp: grid.left_f64(point.interval),
                tie: 0,
            });
        }

        // groups of flows that tie on (core, interval)
        let mut groups: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (f, c) in choices.iter().enumerate() {
            groups.entry((c.core, c.interval)).or_default().push(f);
        }
        let groups: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > 1).collect();
        let orders = groups.iter().try_fold(1usize, |acc, g| {
            (1..=g.len()).try_fold(acc, |a, k| a.checked_mul(k))
        });
        let orders = match orders {
            Some(o) if o <= MAX_TIE_ORDERS => o,
            other => {
                return Err(OracleError::TieOrders {
                    orders: other.unwrap_or(usize::MAX),
                    limit: MAX_TIE_ORDERS,
                })
            }
        };
        for g in &groups {
            perm_cache
                .entry(g.len())
                .or_insert_with(|| permutations(g.len()));
        }
        let mut pick = vec![0usize; groups.len()];
        for _ in 0..orders {
            let mut assignment = Assignment {
                mode: RoundingMode::Randomized,
                seed: None,
                eta: rational::to_f64(grid.eta()),
                choices: choices.clone(),
            };
            for (g, &which) in groups.iter().zip(&pick) {
                for (rank, &member) in perm_cache[&g.len()][which].iter().enumerate() {
                    assignment.choices[g[member]].tie = rank as u64;
                }
            }
            let schedule = list_schedule::<f64>(inst, &assignment)?;
            let obj = objective_values(&schedule, inst);
            let w = prob / orders as f64;
            wct += w * obj.wct;
            makespan += w * obj.makespan;
            simulations += 1;
            for (i, g) in groups.iter().enumerate() {
                pick[i] += 1;
                if pick[i] < perm_cache[&g.len()].len() {
                    break;
                }
                pick[i] = 0;
            }
        }

        for (f, d) in digits.iter_mut().enumerate() {
            *d += 1;
            if *d < dist.of(f).len() {
                break;
            }
            *d = 0;
        }
    }
    Ok(Expectation {
        wct,
        makespan,
        outcomes,
        simulations,
    })
}

// ---------------------------------------------------------------------------
// Ratio reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub instance: String,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub mode: RoundingMode,
    pub lp: f64,
    pub alg: f64,
    pub opt: Option<f64>,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub ms: u128,
    /// Final derandomization estimator (deterministic mode).
    pub estimator: Option<f64>,
    /// Largest chosen-child minus weighted-average over the greedy steps.
    pub descent_gap: Option<f64>,
    /// Largest probability-sum error and capacity excess of the LP solution.
    pub probability_error: f64,
    pub capacity_excess: f64,
    pub schedule_violations: usize,
    pub error: Option<String>,
}

impl RatioReport {
    pub fn failed(
        instance: String,
        seed: u64,
        objective: ObjectiveKind,
        mode: RoundingMode,
        error: String,
    ) -> Self {
        RatioReport {
            instance,
            seed,
            objective,
            mode,
            lp: f64::NAN,
            alg: f64::NAN,
            opt: None,
            ratio: f64::NAN,
            bound: f64::NAN,
            pass: false,
            ms: 0,
            estimator: None,
            descent_gap: None,
            probability_error: f64::NAN,
            capacity_excess: f64::NAN,
            schedule_violations: 0,
            error: Some(error),
        }
    }
}

/// The CSV row: `instance,seed,objective,lp,alg,opt,ratio,bound,pass,ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub instance: String,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub lp: f64,
    pub alg: f64,
    pub opt: Option<f64>,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub ms: u128,
}

impl From<&RatioReport> for RatioRow {
    fn from(r: &RatioReport) -> Self {
        RatioRow {
            instance: r.instance.clone(),
            seed: r.seed,
            objective: r.objective,
            lp: r.lp,
            alg: r.alg,
            opt: r.opt,
            ratio: r.ratio,
            bound: r.bound,
            pass: r.pass,
            ms: r.ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub passed: usize,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub failures: Vec<String>,
}

pub fn aggregate(reports: &[RatioReport]) -> Aggregate {
    let ratios: Vec<f64> = reports
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.ratio)
        .collect();
    let failures = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| match &r.error {
            Some(e) => format!("{}: {e}", r.instance),
            None => format!("{}: ratio {:.6} > bound {}", r.instance, r.ratio, r.bound),
        })
        .collect();
    Aggregate {
        count: reports.len(),
        passed: reports.iter().filter(|r| r.pass).count(),
        max_ratio: ratios.iter().copied().fold(f64::NAN, f64::max),
        mean_ratio: if ratios.is_empty() {
            f64::NAN
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        },
        failures,
    }
}

/// Wall-clock helper for reports.
pub fn elapsed_ms(start: Instant) -> u128 {
    start.elapsed().as_millis()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse;
    use crate::lp::solve_instance;
    use crate::rational::{int, ratio};
    use crate::rounding::sample_from;
    use std::path::Path;

    fn instance(text: &str) -> CoflowInstance {
        parse(text, Path::new("t")).unwrap()
    }

    fn single_flow() -> CoflowInstance {
        instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        )
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        let mut sorted = p.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }

    #[test]
    fn single_flow_opt_is_two() {
        let inst = single_flow();
        for kind in [ObjectiveKind::WeightedCompletion, ObjectiveKind::Makespan] {
            let opt = brute_force_opt(&inst, kind, None, DEFAULT_STATE_BUDGET).unwrap();
            assert_eq!(opt.value, int(2));
        }
    }

    #[test]
    fn shared_port_opt() {
        let inst = instance(
            r#"{"N": 2, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}, {"src": 1, "dst": 2, "size": 3}]}]}"#,
        );
        let opt =
            brute_force_opt(&inst, ObjectiveKind::Makespan, None, DEFAULT_STATE_BUDGET).unwrap();
        assert_eq!(opt.value, int(5));
        // two coflows on one port: shortest weighted first
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 4}]}, {"weight": 3, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let opt = brute_force_opt(
            &inst,
            ObjectiveKind::WeightedCompletion,
            None,
            DEFAULT_STATE_BUDGET,
        )
        .unwrap();
        assert_eq!(opt.value, int(3 * 2 + 6));
    }

    #[test]
    fn two_cores_split_flows() {
        // two flows on the same ports, two unit-speed cores: both finish at 2
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}, {"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}, {"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let opt = brute_force_opt(
            &inst,
            ObjectiveKind::WeightedCompletion,
            None,
            DEFAULT_STATE_BUDGET,
        )
        .unwrap();
        assert_eq!(opt.value, int(4));
        // mixed speeds with a half-unit quantum
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}, {"speed": 2}], "coflows": [{"weight": 1, "release": 1, "flows": [{"src": 1, "dst": 1, "size": 3}]}]}"#,
        );
        let opt =
            brute_force_opt(&inst, ObjectiveKind::Makespan, None, DEFAULT_STATE_BUDGET).unwrap();
        assert_eq!(opt.quantum, ratio(1, 2));
        assert_eq!(opt.value, ratio(5, 2));
    }

    #[test]
    fn brute_force_limits() {
        let inst = single_flow();
        assert!(matches!(
            brute_force_opt(
                &inst,
                ObjectiveKind::Makespan,
                Some(ratio(3, 4)),
                DEFAULT_STATE_BUDGET
            ),
            Err(OracleError::Quantum { .. })
        ));
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 60}]}]}"#,
        );
        assert!(matches!(
            brute_force_opt(&inst, ObjectiveKind::Makespan, None, 10),
            Err(OracleError::Budget(10))
        ));
    }

    #[test]
    fn single_flow_expectation() {
        // both outcomes (ℓ = 0 and ℓ = 1) start at the release: list
        // scheduling never holds a released flow back for its stamp
        let inst = single_flow();
        let s = solve_instance(&inst, &int(1), ObjectiveKind::WeightedCompletion, false).unwrap();
        let e = enumerate_randomized(&s.solution, &s.grid, &inst).unwrap();
        assert!((e.wct - 2.0).abs() < 1e-9);
        assert!((e.makespan - 2.0).abs() < 1e-9);
        assert_eq!((e.outcomes, e.simulations), (2, 2));
    }

    #[test]
    fn point_mass_expectation_is_the_simulation() {
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 3, "release": 3, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let s = solve_instance(&inst, &int(1), ObjectiveKind::WeightedCompletion, false).unwrap();
        let e = enumerate_randomized(&s.solution, &s.grid, &inst).unwrap();
        assert_eq!(e.outcomes, 1);
        assert!((e.wct - 15.0).abs() < 1e-9);
    }

    #[test]
    fn expectation_matches_sampling() {
        let inst = instance(
            r#"{"N": 2, "cores": [{"speed": 1}, {"speed": 2}], "coflows": [{"weight": 2, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}, {"src": 1, "dst": 2, "size": 3}]}, {"weight": 1, "release": 1, "flows": [{"src": 2, "dst": 1, "size": 4}]}]}"#,
        );
        let s = solve_instance(&inst, &int(1), ObjectiveKind::WeightedCompletion, false).unwrap();
        let e = enumerate_randomized(&s.solution, &s.grid, &inst).unwrap();
        let dist = Distributions::from_solution(&s.solution, &inst).unwrap();
        let samples: Vec<f64> = (0..10_000)
            .map(|seed| {
                let a = sample_from(&dist, &s.grid, seed);
                objective_values(&list_schedule::<f64>(&inst, &a).unwrap(), &inst).wct
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var =
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let se = (var / samples.len() as f64).sqrt();
        assert!(
            (mean - e.wct).abs() <= 3.0 * se + 1e-9,
            "mean {mean} vs exact {} (se {se})",
            e.wct
        );
    }

    #[test]
    fn aggregate_collects_failures() {
        let mut ok = RatioReport::failed(
            "a".into(),
            1,
            ObjectiveKind::Makespan,
            RoundingMode::Deterministic,
            String::new(),
        );
        ok.error = None;
        ok.ratio = 1.5;
        ok.pass = true;
        let bad = RatioReport::failed(
            "b".into(),
            2,
            ObjectiveKind::Makespan,
            RoundingMode::Deterministic,
            "boom".into(),
        );
        let agg = aggregate(&[ok, bad]);
        assert_eq!((agg.count, agg.passed), (2, 1));
        assert_eq!(agg.max_ratio, 1.5);
        assert_eq!(agg.failures, vec!["b: boom".to_string()]);
    }
}
