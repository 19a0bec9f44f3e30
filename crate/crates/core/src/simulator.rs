//! Event-driven list scheduling on the parallel cores.
//!
//! At every release or completion each core drops its selection and scans its
//! flows in priority order, activating a released, unfinished flow whenever
//! both its input lane and its output lane on that core are still free. Active
//! flows drain at the core's speed until the next event.
//!
//! The engine is generic over [`Scalar`]: `f64` with a relative tolerance of
//! `1e-9`, or exact [`Rational`].

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num::{BigInt, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{CoflowInstance, FlowKey};
use crate::rational::{self, Number, Rational};
use crate::rounding::Assignment;

const FLOAT_TOL: f64 = 1e-9;

pub trait Scalar:
    Clone
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    fn zero() -> Self;
    fn from_rational(value: &Rational) -> Self;
    fn from_u64(value: u64) -> Self;
    fn to_f64(&self) -> f64;
    /// `self ≤ other` up to the arithmetic's tolerance.
    fn le_tol(&self, other: &Self) -> bool;
    fn eq_tol(&self, other: &Self) -> bool {
        self.le_tol(other) && other.le_tol(self)
    }
    fn to_json(&self) -> serde_json::Value;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }

    fn from_rational(value: &Rational) -> Self {
        rational::to_f64(value)
    }

    fn from_u64(value: u64) -> Self {
        value as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn le_tol(&self, other: &Self) -> bool {
        *self <= *other + FLOAT_TOL * 1f64.max(self.abs()).max(other.abs())
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self)
    }
}

impl Scalar for Rational {
    fn zero() -> Self {
        <Rational as Zero>::zero()
    }

    fn from_rational(value: &Rational) -> Self {
        value.clone()
    }

    fn from_u64(value: u64) -> Self {
        Rational::from_integer(BigInt::from(value))
    }

    fn to_f64(&self) -> f64 {
        rational::to_f64(self)
    }

    fn le_tol(&self, other: &Self) -> bool {
        self <= other
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(Number(self.clone())).expect("rationals serialize")
    }
}

fn min_scalar<S: Scalar>(a: Option<S>, b: S) -> Option<S> {
    match a {
        Some(a) if a <= b => Some(a),
        _ => Some(b),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Release,
    Start,
    Pause,
    Finish,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent<S> {
    pub t: S,
    pub core: usize,
    pub flow: usize,
    pub action: Action,
}

/// One uninterrupted transmission of a flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<S> {
    pub flow: usize,
    pub core: usize,
    pub start: S,
    pub end: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule<S> {
    pub completion: Vec<S>,
    pub coflow_completion: Vec<S>,
    pub makespan: S,
    pub trace: Vec<TraceEvent<S>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("assignment covers {got} flows, instance has {expected}")]
    Coverage { got: usize, expected: usize },
    #[error("flow {0} assigned to a core that does not exist")]
    BadCore(FlowKey),
    #[error("flow {flow} drained below zero ({remaining}) at t = {t}")]
    NegativeRemaining {
        flow: FlowKey,
        remaining: f64,
        t: f64,
    },
    #[error("no flow can progress at t = {0} while work remains")]
    Stalled(f64),
    #[error("step {step} does not divide {what}")]
    StepMismatch { step: String, what: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objectives<S> {
    pub wct: S,
    pub makespan: S,
}

pub fn objective_values<S: Scalar>(schedule: &Schedule<S>, inst: &CoflowInstance) -> Objectives<S> {
    let mut wct = S::zero();
    for (c, coflow) in schedule.coflow_completion.iter().zip(inst.coflows()) {
        wct = wct + S::from_rational(&coflow.weight) * c.clone();
    }
    Objectives {
        wct,
        makespan: schedule.makespan.clone(),
    }
}

impl<S: Scalar> Schedule<S> {
    fn from_completions(
        completion: Vec<S>,
        trace: Vec<TraceEvent<S>>,
        inst: &CoflowInstance,
    ) -> Self {
        let coflow_completion: Vec<S> = inst
            .coflows()
            .iter()
            .map(|c| {
                c.flows
                    .iter()
                    .map(|&f| completion[f].clone())
                    .reduce(|a, b| if b > a { b } else { a })
                    .expect("coflows are nonempty")
            })
            .collect();
        let makespan = coflow_completion
            .iter()
            .cloned()
            .reduce(|a, b| if b > a { b } else { a })
            .expect("instances have a coflow");
        Schedule {
            completion,
            coflow_completion,
            makespan,
            trace,
        }
    }

    pub fn to_f64(&self) -> Schedule<f64> {
        Schedule {
            completion: self.completion.iter().map(Scalar::to_f64).collect(),
            coflow_completion: self.coflow_completion.iter().map(Scalar::to_f64).collect(),
            makespan: self.makespan.to_f64(),
            trace: self
                .trace
                .iter()
                .map(|e| TraceEvent {
                    t: e.t.to_f64(),
                    core: e.core,
                    flow: e.flow,
                    action: e.action,
                })
                .collect(),
        }
    }

    /// Trace as JSON lines: `{"t": .., "core": .., "flow": [i, j, k], "action": ..}`.
    pub fn trace_json_lines(&self, inst: &CoflowInstance) -> String {
        let ports = inst.ports();
        let mut out = String::new();
        for e in &self.trace {
            let key = inst.flow(e.flow).key;
            let line = serde_json::json!({
                "t": e.t.to_json(),
                "core": e.core + 1,
                "flow": [key.src, key.dst - ports, key.coflow],
                "action": e.action,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    /// `{"C": {"1": ..}, "makespan": .., "wct": ..}`.
    pub fn summary_json(&self, inst: &CoflowInstance) -> serde_json::Value {
        let c: serde_json::Map<String, serde_json::Value> = self
            .coflow_completion
            .iter()
            .enumerate()
            .map(|(k, v)| ((k + 1).to_string(), v.to_json()))
            .collect();
        let obj = objective_values(self, inst);
        serde_json::json!({
            "C": c,
            "makespan": obj.makespan.to_json(),
            "wct": obj.wct.to_json(),
        })
    }
}

/// Emits start/pause events when the active set changes.
struct Tracer<S> {
    active: Vec<bool>,
    events: Vec<TraceEvent<S>>,
}

impl<S: Scalar> Tracer<S> {
    fn new(flows: usize) -> Self {
        Tracer {
            active: vec![false; flows],
            events: Vec::new(),
        }
    }

    fn emit(&mut self, t: &S, core: usize, flow: usize, action: Action) {
        self.events.push(TraceEvent {
            t: t.clone(),
            core,
            flow,
            action,
        });
    }

    fn finish(&mut self, t: &S, core: usize, flow: usize) {
        self.active[flow] = false;
        self.emit(t, core, flow, Action::Finish);
    }

    fn update(&mut self, t: &S, selection: &[Vec<usize>], cores: &[usize]) {
        let mut now = vec![false; self.active.len()];
        for list in selection {
            for &f in list {
                now[f] = true;
            }
        }
        for f in 0..now.len() {
            if self.active[f] && !now[f] {
                self.emit(t, cores[f], f, Action::Pause);
            }
        }
        for list in selection {
            for &f in list {
                if !self.active[f] {
                    self.emit(t, cores[f], f, Action::Start);
                }
            }
        }
        self.active = now;
    }
}

/// Per-core lanes and priority lists shared by both engines.
struct Layout {
    ports: usize,
    cores_of: Vec<usize>,
    per_core: Vec<Vec<usize>>,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl Layout {
    fn new(inst: &CoflowInstance, assignment: &Assignment) -> Result<Self, SimError> {
        let n = inst.flows().len();
        if assignment.choices.len() != n {
            return Err(SimError::Coverage {
                got: assignment.choices.len(),
                expected: n,
            });
        }
        for (f, c) in assignment.choices.iter().enumerate() {
            if c.core >= inst.cores() {
                return Err(SimError::BadCore(inst.flow(f).key));
            }
        }
        Ok(Layout {
            ports: inst.ports(),
            cores_of: assignment.choices.iter().map(|c| c.core).collect(),
            per_core: assignment.per_core(inst.cores()),
            src: inst.flows().iter().map(|f| f.key.src).collect(),
            dst: inst.flows().iter().map(|f| f.key.dst).collect(),
        })
    }

    /// First-fit selection in priority order.
    fn select(&self, eligible: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
        let lanes = 2 * self.ports + 1;
        self.per_core
            .iter()
            .map(|list| {
                let mut claimed = vec![false; lanes];
                let mut chosen = Vec::new();
                for &f in list {
                    if eligible(f) && !claimed[self.src[f]] && !claimed[self.dst[f]] {
                        claimed[self.src[f]] = true;
                        claimed[self.dst[f]] = true;
                        chosen.push(f);
                    }
                }
                chosen
            })
            .collect()
    }
}

/// Runs the list schedule for a fixed assignment.
pub fn list_schedule<S: Scalar>(
    inst: &CoflowInstance,
    assignment: &Assignment,
) -> Result<Schedule<S>, SimError> {
    let layout = Layout::new(inst, assignment)?;
    let n = inst.flows().len();
    let speeds: Vec<S> = inst.speeds().iter().map(S::from_rational).collect();
    let mut remaining: Vec<S> = inst.flows().iter().map(|f| S::from_u64(f.size)).collect();
    let mut completion: Vec<Option<S>> = vec![None; n];
    let mut released = vec![false; n];

    let mut releases: Vec<(S, usize)> = inst
        .coflows()
        .iter()
        .enumerate()
        .map(|(k, c)| (S::from_rational(&c.release), k))
        .collect();
    releases.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("releases are comparable")
            .then(a.1.cmp(&b.1))
    });
    let mut next_release = 0usize;

    let mut tracer = Tracer::new(n);
    let mut t = S::zero();
    let mut done = 0usize;
    loop {
        while next_release < releases.len() && releases[next_release].0.le_tol(&t) {
            let k = releases[next_release].1;
            for &f in &inst.coflows()[k].flows {
                released[f] = true;
                tracer.emit(&t, layout.cores_of[f], f, Action::Release);
            }
            next_release += 1;
        }
        let selection = layout.select(|f| released[f] && completion[f].is_none());
        tracer.update(&t, &selection, &layout.cores_of);
        if done == n {
            break;
        }

        let mut next: Option<S> = releases.get(next_release).map(|r| r.0.clone());
        for (p, list) in selection.iter().enumerate() {
            for &f in list {
                next = min_scalar(next, t.clone() + remaining[f].clone() / speeds[p].clone());
            }
        }
        let Some(next) = next else {
            return Err(SimError::Stalled(t.to_f64()));
        };
        let dt = next.clone() - t.clone();
        for (p, list) in selection.iter().enumerate() {
            for &f in list {
                let left = remaining[f].clone() - speeds[p].clone() * dt.clone();
                let size = S::from_u64(inst.flow(f).size);
                // drained, up to tolerance relative to the flow size
                if (left.clone() / size).le_tol(&S::zero()) {
                    if !(S::zero() - left.clone()).le_tol(&S::zero()) {
                        return Err(SimError::NegativeRemaining {
                            flow: inst.flow(f).key,
                            remaining: left.to_f64(),
                            t: next.to_f64(),
                        });
                    }
                    remaining[f] = S::zero();
                    completion[f] = Some(next.clone());
                    done += 1;
                    tracer.finish(&next, p, f);
                } else {
                    remaining[f] = left;
                }
            }
        }
        t = next;
    }
    let completion = completion
        .into_iter()
        .map(|c| c.expect("all flows finished"))
        .collect();
    Ok(Schedule::from_completions(completion, tracer.events, inst))
}

/// Fixed-step reference engine on exact arithmetic. `step` must divide every
/// release and every `d/s_p` of the assigned cores.
pub fn reference_unit_step(
    inst: &CoflowInstance,
    assignment: &Assignment,
    step: &Rational,
) -> Result<Schedule<Rational>, SimError> {
    let layout = Layout::new(inst, assignment)?;
    let n = inst.flows().len();
    let mismatch = |what: String| SimError::StepMismatch {
        step: rational::format_rational(step),
        what,
    };
    if !step.is_positive() {
        return Err(mismatch("anything (step must be positive)".into()));
    }
    let whole = |value: Rational, what: String| -> Result<u64, SimError> {
        let q = value / step;
        if q.is_integer() {
            q.to_integer().to_u64().ok_or_else(|| mismatch(what))
        } else {
            Err(mismatch(what))
        }
    };
    let mut units = Vec::with_capacity(n);
    for (f, flow) in inst.flows().iter().enumerate() {
        let p = layout.cores_of[f];
        let work = Rational::from_integer(BigInt::from(flow.size)) / inst.speed(p);
        units.push(whole(
            work,
            format!("the transmission time of flow {}", flow.key),
        )?);
    }
    let mut release_tick = Vec::with_capacity(n);
    for f in 0..n {
        let r = inst.release_of(f).clone();
        release_tick.push(whole(
            r,
            format!("the release of flow {}", inst.flow(f).key),
        )?);
    }

    let mut completion: Vec<Option<Rational>> = vec![None; n];
    let mut released = vec![false; n];
    let mut tracer: Tracer<Rational> = Tracer::new(n);
    let horizon = release_tick.iter().max().copied().unwrap_or(0) + units.iter().sum::<u64>() + 1;
    let mut remaining = units;
    let mut done = 0usize;
    for tick in 0..=horizon {
        let t = Rational::from_integer(BigInt::from(tick)) * step;
        for f in 0..n {
            if !released[f] && release_tick[f] <= tick {
                released[f] = true;
                tracer.emit(&t, layout.cores_of[f], f, Action::Release);
            }
        }
        let selection = layout.select(|f| released[f] && completion[f].is_none());
        tracer.update(&t, &selection, &layout.cores_of);
        if done == n {
            break;
        }
        let end = &t + step;
        for (p, list) in selection.iter().enumerate() {
            for &f in list {
                remaining[f] -= 1;
                if remaining[f] == 0 {
                    completion[f] = Some(end.clone());
                    done += 1;
                    tracer.finish(&end, p, f);
                }
            }
        }
    }
    if done < n {
        return Err(SimError::Stalled(rational::to_f64(
            &(Rational::from_integer(BigInt::from(horizon)) * step),
        )));
    }
    let completion = completion
        .into_iter()
        .map(|c| c.expect("finished"))
        .collect();
    Ok(Schedule::from_completions(completion, tracer.events, inst))
}

// ---------------------------------------------------------------------------
// Auditing

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Trace,
    Release,
    WrongCore,
    Exclusivity,
    Accounting,
    WorkConservation,
    Priority,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub flow: Option<FlowKey>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub violations: Vec<Violation>,
}

impl ScheduleReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Rebuilds transmission segments from the trace, reporting malformed sequences.
pub fn segments_from_trace<S: Scalar>(
    schedule: &Schedule<S>,
    inst: &CoflowInstance,
    report: &mut ScheduleReport,
) -> Vec<Segment<S>> {
    let n = inst.flows().len();
    let mut open: Vec<Option<(usize, S)>> = vec![None; n];
    let mut finished = vec![false; n];
    let mut segments = Vec::new();
    for e in &schedule.trace {
        let key = inst.flow(e.flow).key;
        let mut bad = |msg: &str| {
            report.violations.push(Violation {
                kind: ViolationKind::Trace,
                t: e.t.to_f64(),
                flow: Some(key),
                message: msg.to_string(),
            })
        };
        match e.action {
            Action::Release => {}
            Action::Start => {
                if finished[e.flow] {
                    bad("start after finish");
                } else if open[e.flow].is_some() {
                    bad("start while already transmitting");
                } else {
                    open[e.flow] = Some((e.core, e.t.clone()));
                }
            }
            Action::Pause | Action::Finish => match open[e.flow].take() {
                Some((core, start)) => {
                    if core != e.core {
                        bad("segment closed on a different core");
                    }
                    segments.push(Segment {
                        flow: e.flow,
                        core,
                        start,
                        end: e.t.clone(),
                    });
                    if e.action == Action::Finish {
                        finished[e.flow] = true;
                    }
                }
                None => bad("pause or finish without a start"),
            },
        }
    }
    for f in 0..n {
        if open[f].is_some() || !finished[f] {
            report.violations.push(Violation {
                kind: ViolationKind::Trace,
                t: schedule.completion[f].to_f64(),
                flow: Some(inst.flow(f).key),
                message: "flow never finishes in the trace".into(),
            });
        }
    }
    segments
}

fn sorted_breakpoints<S: Scalar>(mut points: Vec<S>) -> Vec<S> {
    points.sort_by(|a, b| a.partial_cmp(b).expect("times are comparable"));
    let mut out: Vec<S> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|last| !p.le_tol(last)) {
            out.push(p);
        }
    }
    out
}

/// Audits a schedule against the instance and the assignment it executed:
/// trace well-formedness, release times, core placement, per-port
/// exclusivity, drained amounts and completion bookkeeping, and the
/// first-fit rule (a waiting flow must be blocked by a higher-priority
/// flow on one of its ports).
pub fn validate_schedule<S: Scalar>(
    schedule: &Schedule<S>,
    inst: &CoflowInstance,
    assignment: &Assignment,
) -> ScheduleReport {
    let mut report = ScheduleReport::default();
    let n = inst.flows().len();
    if assignment.choices.len() != n || schedule.completion.len() != n {
        report.violations.push(Violation {
            kind: ViolationKind::Accounting,
            t: 0.0,
            flow: None,
            message: "schedule, assignment and instance disagree on the flow count".into(),
        });
        return report;
    }
    let segments = segments_from_trace(schedule, inst, &mut report);
    let speeds: Vec<S> = inst.speeds().iter().map(S::from_rational).collect();
    let releases: Vec<S> = (0..n)
        .map(|f| S::from_rational(inst.release_of(f)))
        .collect();
    let mut push = |kind, t: f64, flow: Option<usize>, message: String| {
        report.violations.push(Violation {
            kind,
            t,
            flow: flow.map(|f| inst.flow(f).key),
            message,
        })
    };

    let mut sent: Vec<S> = vec![S::zero(); n];
    let mut last_end: Vec<Option<S>> = vec![None; n];
    for seg in &segments {
        let f = seg.flow;
        if !releases[f].le_tol(&seg.start) {
            push(
                ViolationKind::Release,
                seg.start.to_f64(),
                Some(f),
                "transmits before release".into(),
            );
        }
        if seg.core != assignment.core_of(f) {
            push(
                ViolationKind::WrongCore,
                seg.start.to_f64(),
                Some(f),
                format!(
                    "transmits on core {} instead of {}",
                    seg.core + 1,
                    assignment.core_of(f) + 1
                ),
            );
        }
        if !seg.start.le_tol(&seg.end) {
            push(
                ViolationKind::Trace,
                seg.start.to_f64(),
                Some(f),
                "segment ends before it starts".into(),
            );
        }
        sent[f] =
            sent[f].clone() + speeds[seg.core].clone() * (seg.end.clone() - seg.start.clone());
        if last_end[f].as_ref().is_none_or(|e| *e < seg.end) {
            last_end[f] = Some(seg.end.clone());
        }
    }
    for f in 0..n {
        let size = S::from_u64(inst.flow(f).size);
        if !sent[f].eq_tol(&size) {
            push(
                ViolationKind::Accounting,
                schedule.completion[f].to_f64(),
                Some(f),
                format!("transmitted {} of {}", sent[f].to_f64(), size.to_f64()),
            );
        }
        if last_end[f]
            .as_ref()
            .is_none_or(|e| !e.eq_tol(&schedule.completion[f]))
        {
            push(
                ViolationKind::Accounting,
                schedule.completion[f].to_f64(),
                Some(f),
                "completion time differs from the end of the last transmission".into(),
            );
        }
    }

    // elementary intervals between consecutive breakpoints
    let mut points: Vec<S> = releases.clone();
    for seg in &segments {
        points.push(seg.start.clone());
        points.push(seg.end.clone());
    }
    let points = sorted_breakpoints(points);
    let lanes = 2 * inst.ports() + 1;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let active: Vec<&Segment<S>> = segments
            .iter()
            .filter(|s| s.start.le_tol(a) && b.le_tol(&s.end) && !s.end.le_tol(&s.start))
            .collect();
        for p in 0..inst.cores() {
            let mut holder: Vec<Option<usize>> = vec![None; lanes];
            for seg in active.iter().filter(|s| s.core == p) {
                let key = inst.flow(seg.flow).key;
                for lane in [key.src, key.dst] {
                    match holder[lane] {
                        Some(other) if other != seg.flow => push(
                            ViolationKind::Exclusivity,
                            a.to_f64(),
                            Some(seg.flow),
                            format!(
                                "shares port {lane} on core {} with {}",
                                p + 1,
                                inst.flow(other).key
                            ),
                        ),
                        _ => holder[lane] = Some(seg.flow),
                    }
                }
            }
            // waiting flows must be blocked by a higher-priority holder
            for f in (0..n).filter(|&f| assignment.core_of(f) == p) {
                let waiting = releases[f].le_tol(a)
                    && !schedule.completion[f].le_tol(a)
                    && !active.iter().any(|s| s.flow == f);
                if !waiting {
                    continue;
                }
                let key = inst.flow(f).key;
                let blockers: Vec<usize> = [holder[key.src], holder[key.dst]]
                    .into_iter()
                    .flatten()
                    .collect();
                if blockers.is_empty() {
                    push(
                        ViolationKind::WorkConservation,
                        a.to_f64(),
                        Some(f),
                        format!("waits on core {} while both of its ports are idle", p + 1),
                    );
                } else if !blockers
                    .iter()
                    .any(|&h| assignment.priority_key(h) < assignment.priority_key(f))
                {
                    push(
                        ViolationKind::Priority,
                        a.to_f64(),
                        Some(f),
                        "waits behind lower-priority flows only".into(),
                    );
                }
            }
        }
    }
    report
}

/// For the last-finishing flow `g` of each coflow, the length of time in
/// `[r_g, C_g)` during which neither of `g`'s ports carries any flow on `g`'s
/// core. The busy-window argument needs this to be zero.
pub fn busy_window_gaps<S: Scalar>(
    schedule: &Schedule<S>,
    inst: &CoflowInstance,
    assignment: &Assignment,
) -> Vec<f64> {
    let mut report = ScheduleReport::default();
    let segments = segments_from_trace(schedule, inst, &mut report);
    inst.coflows()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let g = *c
                .flows
                .iter()
                .find(|&&f| schedule.completion[f].eq_tol(&schedule.coflow_completion[k]))
                .expect("some flow attains the coflow completion");
            let key = inst.flow(g).key;
            let core = assignment.core_of(g);
            let start = S::from_rational(&c.release);
            let end = schedule.completion[g].clone();
            let mut busy: Vec<(S, S)> = segments
                .iter()
                .filter(|s| {
                    let k2 = inst.flow(s.flow).key;
                    s.core == core && (k2.src == key.src || k2.dst == key.dst)
                })
                .map(|s| (s.start.clone(), s.end.clone()))
                .collect();
            busy.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("comparable"));
            let mut gap = 0.0;
            let mut cursor = start;
            for (s, e) in busy {
                if !end.clone().le_tol(&cursor) && cursor < s {
                    let upto = if s < end { s } else { end.clone() };
                    gap += (upto - cursor.clone()).to_f64().max(0.0);
                }
                if e > cursor {
                    cursor = e;
                }
            }
            if cursor < end {
                gap += (end - cursor).to_f64();
            }
            gap
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_random, parse, validate, GeneratorParams};
    use crate::rational::{int, ratio};
    use crate::rounding::{FlowChoice, RoundingMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::path::Path;

    fn instance(text: &str) -> CoflowInstance {
        parse(text, Path::new("t")).unwrap()
    }

    fn fixed(choices: &[(usize, usize)]) -> Assignment {
        Assignment {
            mode: RoundingMode::Deterministic,
            seed: None,
            eta: 1.0,
            choices: choices
                .iter()
                .map(|&(core, interval)| FlowChoice {
                    core,
                    interval,
                    stamp: 0.0,
                    tie: 0,
                })
                .collect(),
        }
    }

    /// Random core and interval per flow, with random ties.
    fn random_assignment(inst: &CoflowInstance, seed: u64) -> Assignment {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Assignment {
            mode: RoundingMode::Randomized,
            seed: Some(seed),
            eta: 1.0,
            choices: (0..inst.flows().len())
                .map(|_| FlowChoice {
                    core: rng.gen_range(0..inst.cores()),
                    interval: rng.gen_range(0..4),
                    stamp: 0.0,
                    tie: rng.gen_range(0..3),
                })
                .collect(),
        }
    }

    fn shared_port() -> CoflowInstance {
        instance(
            r#"{"N": 2, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 2}, {"src": 1, "dst": 2, "size": 3}]}]}"#,
        )
    }

    #[test]
    fn lone_flow_runs_at_full_rate() {
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 3}]}]}"#,
        );
        let s: Schedule<f64> = list_schedule(&inst, &fixed(&[(0, 0)])).unwrap();
        assert_eq!(s.completion, vec![3.0]);
        assert_eq!(s.makespan, 3.0);
        let actions: Vec<Action> = s.trace.iter().map(|e| e.action).collect();
        assert_eq!(
            actions,
            vec![Action::Release, Action::Start, Action::Finish]
        );
    }

    #[test]
    fn shared_input_port_serializes() {
        let inst = shared_port();
        let a = fixed(&[(0, 0), (0, 0)]);
        let s: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
        assert_eq!(s.completion, vec![int(2), int(5)]);
        assert_eq!(s.coflow_completion, vec![int(5)]);
        let r = reference_unit_step(&inst, &a, &ratio(1, 2)).unwrap();
        assert_eq!(r.completion, s.completion);
        assert!(validate_schedule(&s, &inst, &a).is_clean());
        let obj = objective_values(&s, &inst);
        assert_eq!((obj.wct, obj.makespan), (int(5), int(5)));
        let summary = s.to_f64().summary_json(&inst);
        assert_eq!(summary["C"]["1"], 5.0);
    }

    #[test]
    fn disjoint_ports_run_together() {
        let inst = instance(
            r#"{"N": 2, "cores": [{"speed": 2}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 4}, {"src": 2, "dst": 2, "size": 6}]}]}"#,
        );
        let s: Schedule<f64> = list_schedule(&inst, &fixed(&[(0, 0), (0, 0)])).unwrap();
        assert_eq!(s.completion, vec![2.0, 3.0]);
    }

    #[test]
    fn release_preempts_lower_priority_flow() {
        // the later coflow sits in an earlier interval, so it preempts at t = 1
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 1, "release": 0, "flows": [{"src": 1, "dst": 1, "size": 4}]}, {"weight": 1, "release": 1, "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let a = fixed(&[(0, 3), (0, 1)]);
        let s: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
        assert_eq!(s.completion, vec![int(6), int(3)]);
        assert!(s
            .trace
            .iter()
            .any(|e| e.action == Action::Pause && e.flow == 0 && e.t == int(1)));
        assert!(validate_schedule(&s, &inst, &a).is_clean());
        assert_eq!(
            reference_unit_step(&inst, &a, &int(1)).unwrap().completion,
            s.completion
        );
    }

    #[test]
    fn idle_until_release() {
        let inst = instance(
            r#"{"N": 1, "cores": [{"speed": 1}], "coflows": [{"weight": 2, "release": "1.5", "flows": [{"src": 1, "dst": 1, "size": 2}]}]}"#,
        );
        let a = fixed(&[(0, 2)]);
        let s: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
        assert_eq!(s.completion, vec![ratio(7, 2)]);
        assert_eq!(objective_values(&s, &inst).wct, int(7));
        assert!(reference_unit_step(&inst, &a, &int(1)).is_err());
        assert_eq!(
            reference_unit_step(&inst, &a, &ratio(1, 2))
                .unwrap()
                .completion,
            s.completion
        );
    }

    #[test]
    fn rejects_bad_assignments() {
        let inst = shared_port();
        assert!(matches!(
            list_schedule::<f64>(&inst, &fixed(&[(0, 0)])),
            Err(SimError::Coverage { .. })
        ));
        assert!(matches!(
            list_schedule::<f64>(&inst, &fixed(&[(0, 0), (3, 0)])),
            Err(SimError::BadCore(_))
        ));
    }

    #[test]
    fn corrupted_traces_are_caught() {
        let inst = shared_port();
        let a = fixed(&[(0, 0), (0, 0)]);
        let good: Schedule<Rational> = list_schedule(&inst, &a).unwrap();

        // run the second flow alongside the first on the shared input port
        let mut overlap = good.clone();
        overlap.trace = vec![
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 0,
                action: Action::Release,
            },
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 1,
                action: Action::Release,
            },
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 0,
                action: Action::Start,
            },
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 1,
                action: Action::Start,
            },
            TraceEvent {
                t: int(2),
                core: 0,
                flow: 0,
                action: Action::Finish,
            },
            TraceEvent {
                t: int(3),
                core: 0,
                flow: 1,
                action: Action::Finish,
            },
        ];
        overlap.completion = vec![int(2), int(3)];
        let report = validate_schedule(&overlap, &inst, &a);
        assert!(report.count(ViolationKind::Exclusivity) > 0);

        // idle port while the first flow waits
        let mut idle = good.clone();
        idle.trace = vec![
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 0,
                action: Action::Release,
            },
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 1,
                action: Action::Release,
            },
            TraceEvent {
                t: int(1),
                core: 0,
                flow: 0,
                action: Action::Start,
            },
            TraceEvent {
                t: int(3),
                core: 0,
                flow: 0,
                action: Action::Finish,
            },
            TraceEvent {
                t: int(3),
                core: 0,
                flow: 1,
                action: Action::Start,
            },
            TraceEvent {
                t: int(6),
                core: 0,
                flow: 1,
                action: Action::Finish,
            },
        ];
        idle.completion = vec![int(3), int(6)];
        let report = validate_schedule(&idle, &inst, &a);
        assert!(report.count(ViolationKind::WorkConservation) > 0);

        // lower-priority flow goes first
        let mut inverted = good.clone();
        inverted.trace = vec![
            TraceEvent {
                t: int(0),
                core: 0,
                flow: 1,
                action: Action::Start,
            },
            TraceEvent {
                t: int(3),
                core: 0,
                flow: 1,
                action: Action::Finish,
            },
            TraceEvent {
                t: int(3),
                core: 0,
                flow: 0,
                action: Action::Start,
            },
            TraceEvent {
                t: int(5),
                core: 0,
                flow: 0,
                action: Action::Finish,
            },
        ];
        inverted.completion = vec![int(5), int(3)];
        let report = validate_schedule(&inverted, &inst, &a);
        assert!(report.count(ViolationKind::Priority) > 0);

        // truncated transmission
        let mut short = good.clone();
        short
            .trace
            .retain(|e| !(e.flow == 1 && e.action == Action::Finish));
        let report = validate_schedule(&short, &inst, &a);
        assert!(report.count(ViolationKind::Trace) > 0);
    }

    #[test]
    fn speed_scaling_duality() {
        for seed in 0..20 {
            let inst = generate_random(&GeneratorParams {
                ports: 3,
                cores: 2,
                coflows: 3,
                speed_set: vec![1, 2, 3],
                // large enough that d/s_max ≥ 1 survives the speed-up
                size_range: (8, 30),
                release_range: (0, 4),
                weight_range: (1, 3),
                density: 0.5,
                seed,
            })
            .unwrap();
            let c = ratio(5, 2);
            let mut record = inst.to_record();
            for core in &mut record.cores {
                core.speed = Number(&core.speed.0 * &c);
            }
            for coflow in &mut record.coflows {
                coflow.release = Number(&coflow.release.0 / &c);
            }
            let scaled = validate(&record).unwrap();
            let a = random_assignment(&inst, seed);
            let base: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
            let fast: Schedule<Rational> = list_schedule(&scaled, &a).unwrap();
            let expect: Vec<Rational> = base.completion.iter().map(|x| x / &c).collect();
            assert_eq!(fast.completion, expect);
        }
    }

    fn random_instance(seed: u64, releases: u64) -> CoflowInstance {
        generate_random(&GeneratorParams {
            ports: 3,
            cores: 3,
            coflows: 4,
            speed_set: vec![1, 2, 3],
            size_range: (3, 15),
            release_range: (0, releases),
            weight_range: (1, 5),
            density: 0.45,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn engines_agree_and_audit_clean() {
        for seed in 0..60 {
            let inst = random_instance(seed, 5);
            let a = random_assignment(&inst, seed + 1000);
            let exact: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
            let float: Schedule<f64> = list_schedule(&inst, &a).unwrap();
            let step = ratio(1, 6);
            let reference = reference_unit_step(&inst, &a, &step).unwrap();
            assert_eq!(reference.completion, exact.completion, "seed {seed}");
            for (x, y) in exact.completion.iter().zip(&float.completion) {
                assert!((rational::to_f64(x) - y).abs() < 1e-9);
            }
            assert!(validate_schedule(&exact, &inst, &a).is_clean());
            let report = validate_schedule(&float, &inst, &a);
            assert!(report.is_clean(), "{:?}", report.violations);
            assert!(busy_window_gaps(&exact, &inst, &a)
                .iter()
                .all(|g| *g == 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn completions_respect_release_and_work(seed in 0u64..10_000, releases in 0u64..6) {
            let inst = random_instance(seed, releases);
            let a = random_assignment(&inst, seed);
            let s: Schedule<Rational> = list_schedule(&inst, &a).unwrap();
            for (f, flow) in inst.flows().iter().enumerate() {
                let own = Rational::from_integer(BigInt::from(flow.size)) / inst.speed(a.core_of(f));
                prop_assert!(s.completion[f] >= inst.release_of(f) + own);
            }
            prop_assert!(validate_schedule(&s, &inst, &a).is_clean());
        }
    }
}
