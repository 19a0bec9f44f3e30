//! Problem data: ports, network cores with speeds, and coflows with demand
//! matrices, weights and release times.
//!
//! Input ports are numbered `1..=N` and output ports `N+1..=2N` internally.
//! Files number destinations `1..=N`; the offset is applied on load and
//! removed on save. Zero-size entries never become flows.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num::{BigInt, One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{self, Number, Rational};

/// A flow `(i, j, k)`: input port, output port (already offset by `N`) and
/// 1-based coflow index.
///
/// Ordered by coflow first, then destination, then source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: usize,
    pub dst: usize,
    pub coflow: usize,
}

impl FlowKey {
    pub fn new(src: usize, dst: usize, coflow: usize) -> Self {
        FlowKey { src, dst, coflow }
    }
}

impl Ord for FlowKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.coflow, self.dst, self.src).cmp(&(other.coflow, other.dst, other.src))
    }
}

impl PartialOrd for FlowKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.src, self.dst, self.coflow)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flow {
    pub key: FlowKey,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coflow {
    pub weight: Rational,
    pub release: Rational,
    /// Indices into [`CoflowInstance::flows`], ascending.
    pub flows: Vec<usize>,
}

/// A validated instance. Immutable; flows are stored in ascending
/// [`FlowKey`] order so a flow's index doubles as its rank in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoflowInstance {
    ports: usize,
    speeds: Vec<Rational>,
    coflows: Vec<Coflow>,
    flows: Vec<Flow>,
    by_src: Vec<Vec<usize>>,
    by_dst: Vec<Vec<usize>>,
}

/// Borrowed view of 𝓕 and its partitions by source, destination and coflow.
pub struct FlowSetView<'a> {
    inst: &'a CoflowInstance,
    all: Vec<usize>,
}

impl<'a> FlowSetView<'a> {
    pub fn all(&self) -> &[usize] {
        &self.all
    }

    /// Flows leaving input port `i` (1-based).
    pub fn by_src(&self, i: usize) -> &'a [usize] {
        &self.inst.by_src[i - 1]
    }

    /// Flows entering output port `j` (in `N+1..=2N`).
    pub fn by_dst(&self, j: usize) -> &'a [usize] {
        &self.inst.by_dst[j - self.inst.ports - 1]
    }

    /// Flows of coflow `k` (1-based).
    pub fn by_coflow(&self, k: usize) -> &'a [usize] {
        &self.inst.coflows[k - 1].flows
    }
}

/// Per-port loads `L_ik`, `L_jk` and the speed extremes.
#[derive(Clone, Debug, PartialEq)]
pub struct PortLoads {
    /// `input[i-1][k-1] = L_ik`
    pub input: Vec<Vec<u64>>,
    /// `output[j-N-1][k-1] = L_jk`
    pub output: Vec<Vec<u64>>,
    pub s_min: Rational,
    pub s_max: Rational,
}

impl PortLoads {
    pub fn max_input_total(&self) -> u64 {
        self.input
            .iter()
            .map(|row| row.iter().sum::<u64>())
            .max()
            .unwrap_or(0)
    }

    pub fn max_output_total(&self) -> u64 {
        self.output
            .iter()
            .map(|row| row.iter().sum::<u64>())
            .max()
            .unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// File records

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    #[serde(rename = "N")]
    pub ports: i64,
    pub cores: Vec<CoreRecord>,
    pub coflows: Vec<CoflowRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreRecord {
    pub speed: Number,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoflowRecord {
    pub weight: Number,
    pub release: Number,
    pub flows: Vec<FlowRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub src: i64,
    /// External numbering `1..=N`.
    pub dst: i64,
    pub size: Number,
}

// ---------------------------------------------------------------------------
// Errors

/// Every invariant violation found in a record, in discovery order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub issues: Vec<String>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid instance: {}", self.issues.join("; "))
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("generator parameters: {0}")]
    Generator(String),
}

// ---------------------------------------------------------------------------

/// Checks a raw record against every instance invariant and builds the typed
/// instance.
pub fn validate(raw: &InstanceRecord) -> Result<CoflowInstance, ValidationError> {
    let mut issues = Vec::new();

    if raw.ports < 1 {
        issues.push(format!(
            "port count N must be at least 1 (got {})",
            raw.ports
        ));
    }
    if raw.cores.is_empty() {
        issues.push("at least one core is required".to_string());
    }
    if raw.coflows.is_empty() {
        issues.push("at least one coflow is required".to_string());
    }
    for (p, core) in raw.cores.iter().enumerate() {
        if !core.speed.0.is_positive() {
            issues.push(format!(
                "core {}: speed must be positive (got {})",
                p + 1,
                core.speed
            ));
        }
    }
    let s_max = raw
        .cores
        .iter()
        .map(|c| c.speed.0.clone())
        .max()
        .unwrap_or_else(Rational::one);

    let ports = raw.ports.max(0) as usize;
    let mut flows: Vec<Flow> = Vec::new();
    let mut coflows = Vec::with_capacity(raw.coflows.len());

    for (idx, record) in raw.coflows.iter().enumerate() {
        let k = idx + 1;
        if !record.weight.0.is_positive() {
            issues.push(format!(
                "coflow {k}: weight must be positive (got {})",
                record.weight
            ));
        }
        if record.release.0.is_negative() {
            issues.push(format!(
                "coflow {k}: release must be nonnegative (got {})",
                record.release
            ));
        }
        let mut seen = std::collections::HashSet::new();
        let mut positive = 0usize;
        for fr in &record.flows {
            let at = format!("coflow {k} flow (src {}, dst {})", fr.src, fr.dst);
            let mut ok = true;
            if fr.src < 1 || fr.src as usize > ports {
                issues.push(format!("{at}: src out of range 1..={ports}"));
                ok = false;
            }
            if fr.dst < 1 || fr.dst as usize > ports {
                issues.push(format!("{at}: dst out of range 1..={ports}"));
                ok = false;
            }
            if !seen.insert((fr.src, fr.dst)) {
                issues.push(format!("{at}: duplicate flow"));
                ok = false;
            }
            let size = &fr.size.0;
            if !size.is_integer() {
                issues.push(format!("{at}: demand must be integer (got {})", fr.size));
                continue;
            }
            if size.is_negative() {
                issues.push(format!(
                    "{at}: demand must be nonnegative (got {})",
                    fr.size
                ));
                continue;
            }
            if size.is_zero() {
                continue;
            }
            let ratio = size / &s_max;
            if ratio < Rational::one() {
                issues.push(format!(
                    "{at}: d/s_max = {} < 1",
                    rational::format_rational(&ratio)
                ));
                ok = false;
            }
            let Some(size) = size.to_integer().to_u64() else {
                issues.push(format!("{at}: demand too large"));
                continue;
            };
            positive += 1;
            if ok {
                flows.push(Flow {
                    key: FlowKey::new(fr.src as usize, ports + fr.dst as usize, k),
                    size,
                });
            }
        }
        if positive == 0 {
            issues.push(format!("coflow {k}: no flow with positive demand"));
        }
        coflows.push(Coflow {
            weight: record.weight.0.clone(),
            release: record.release.0.clone(),
            flows: Vec::new(),
        });
    }

    if !issues.is_empty() {
        return Err(ValidationError { issues });
    }

    flows.sort_by_key(|f| f.key);
    let mut by_src = vec![Vec::new(); ports];
    let mut by_dst = vec![Vec::new(); ports];
    for (idx, flow) in flows.iter().enumerate() {
        by_src[flow.key.src - 1].push(idx);
        by_dst[flow.key.dst - ports - 1].push(idx);
        coflows[flow.key.coflow - 1].flows.push(idx);
    }

    Ok(CoflowInstance {
        ports,
        speeds: raw.cores.iter().map(|c| c.speed.0.clone()).collect(),
        coflows,
        flows,
        by_src,
        by_dst,
    })
}

impl CoflowInstance {
    /// Port count per side, `N`.
    pub fn ports(&self) -> usize {
        self.ports
    }

    /// Core count, `m`.
    pub fn cores(&self) -> usize {
        self.speeds.len()
    }

    pub fn speeds(&self) -> &[Rational] {
        &self.speeds
    }

    /// Speed of the 0-based core `p`.
    pub fn speed(&self, p: usize) -> &Rational {
        &self.speeds[p]
    }

    pub fn speed_f64(&self, p: usize) -> f64 {
        rational::to_f64(&self.speeds[p])
    }

    pub fn coflows(&self) -> &[Coflow] {
        &self.coflows
    }

    /// The 1-based coflow `k`.
    pub fn coflow(&self, k: usize) -> &Coflow {
        &self.coflows[k - 1]
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn flow(&self, idx: usize) -> &Flow {
        &self.flows[idx]
    }

    pub fn flow_index(&self, key: FlowKey) -> Option<usize> {
        self.flows.binary_search_by(|f| f.key.cmp(&key)).ok()
    }

    pub fn release_of(&self, flow: usize) -> &Rational {
        &self.coflows[self.flows[flow].key.coflow - 1].release
    }

    pub fn weight_of(&self, flow: usize) -> &Rational {
        &self.coflows[self.flows[flow].key.coflow - 1].weight
    }

    pub fn flow_sets(&self) -> FlowSetView<'_> {
        FlowSetView {
            inst: self,
            all: (0..self.flows.len()).collect(),
        }
    }

    pub fn s_min(&self) -> &Rational {
        self.speeds
            .iter()
            .min()
            .expect("validated instance has a core")
    }

    pub fn s_max(&self) -> &Rational {
        self.speeds
            .iter()
            .max()
            .expect("validated instance has a core")
    }

    pub fn max_release(&self) -> &Rational {
        self.coflows
            .iter()
            .map(|c| &c.release)
            .max()
            .expect("validated instance has a coflow")
    }

    pub fn has_zero_releases(&self) -> bool {
        self.coflows.iter().all(|c| c.release.is_zero())
    }

    pub fn loads(&self) -> PortLoads {
        let n = self.coflows.len();
        let mut input = vec![vec![0u64; n]; self.ports];
        let mut output = vec![vec![0u64; n]; self.ports];
        for flow in &self.flows {
            let k = flow.key.coflow - 1;
            input[flow.key.src - 1][k] += flow.size;
            output[flow.key.dst - self.ports - 1][k] += flow.size;
        }
        PortLoads {
            input,
            output,
            s_min: self.s_min().clone(),
            s_max: self.s_max().clone(),
        }
    }

    /// Flows other than `flow` sharing its input or its output port, ascending.
    pub fn competitors(&self, flow: usize) -> Vec<usize> {
        let key = self.flows[flow].key;
        let mut out: Vec<usize> = self.by_src[key.src - 1]
            .iter()
            .chain(&self.by_dst[key.dst - self.ports - 1])
            .copied()
            .filter(|&g| g != flow)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Same instance with every weight multiplied by `factor`.
    pub fn with_scaled_weights(&self, factor: &Rational) -> CoflowInstance {
        let mut out = self.clone();
        for c in &mut out.coflows {
            c.weight = &c.weight * factor;
        }
        out
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            ports: self.ports as i64,
            cores: self
                .speeds
                .iter()
                .map(|s| CoreRecord {
                    speed: Number(s.clone()),
                })
                .collect(),
            coflows: self
                .coflows
                .iter()
                .map(|c| CoflowRecord {
                    weight: Number(c.weight.clone()),
                    release: Number(c.release.clone()),
                    flows: c
                        .flows
                        .iter()
                        .map(|&f| {
                            let flow = &self.flows[f];
                            FlowRecord {
                                src: flow.key.src as i64,
                                dst: (flow.key.dst - self.ports) as i64,
                                size: Number(Rational::from_integer(BigInt::from(flow.size))),
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// `T = max_k r_k + (max_i Σ_k L_ik + max_j Σ_k L_jk) / s_min − 1`.
pub fn time_horizon(inst: &CoflowInstance) -> Rational {
    let loads = inst.loads();
    let bracket = Rational::from_integer(BigInt::from(
        loads.max_input_total() + loads.max_output_total(),
    ));
    inst.max_release() + bracket / &loads.s_min - Rational::one()
}

// ---------------------------------------------------------------------------
// Generation

/// Parameters for [`generate_random`]. Ranges are inclusive integer ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub ports: usize,
    pub cores: usize,
    pub coflows: usize,
    /// Each core draws its speed uniformly from this set.
    pub speed_set: Vec<u64>,
    pub size_range: (u64, u64),
    pub release_range: (u64, u64),
    pub weight_range: (u64, u64),
    /// Probability that a given (src, dst) pair carries a flow in a coflow.
    pub density: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            ports: 2,
            cores: 2,
            coflows: 2,
            speed_set: vec![1, 2],
            size_range: (2, 10),
            release_range: (0, 0),
            weight_range: (1, 5),
            density: 0.5,
            seed: 0,
        }
    }
}

/// Seeded random instance; a pure function of `params`.
pub fn generate_random(params: &GeneratorParams) -> Result<CoflowInstance, InstanceError> {
    let bad = |msg: String| Err(InstanceError::Generator(msg));
    if params.ports == 0 || params.cores == 0 || params.coflows == 0 {
        return bad("ports, cores and coflows must all be at least 1".into());
    }
    if params.speed_set.is_empty() || params.speed_set.contains(&0) {
        return bad("speed set must be nonempty and positive".into());
    }
    for (name, (lo, hi)) in [
        ("size", params.size_range),
        ("release", params.release_range),
        ("weight", params.weight_range),
    ] {
        if lo > hi {
            return bad(format!("empty {name} range [{lo}, {hi}]"));
        }
    }
    if params.weight_range.0 == 0 {
        return bad("weights must be positive".into());
    }
    let max_speed = *params.speed_set.iter().max().unwrap();
    if params.size_range.0 < max_speed {
        return bad(format!(
            "minimum size {} is below the largest speed {max_speed}",
            params.size_range.0
        ));
    }
    if !(0.0..=1.0).contains(&params.density) {
        return bad(format!("density {} outside [0, 1]", params.density));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cores = (0..params.cores)
        .map(|_| CoreRecord {
            speed: Number::from_int(*params.speed_set.choose(&mut rng).unwrap() as i64),
        })
        .collect();
    let mut coflows = Vec::with_capacity(params.coflows);
    for _ in 0..params.coflows {
        let weight = rng.gen_range(params.weight_range.0..=params.weight_range.1);
        let release = rng.gen_range(params.release_range.0..=params.release_range.1);
        let mut flows = Vec::new();
        for src in 1..=params.ports {
            for dst in 1..=params.ports {
                if rng.gen_bool(params.density) {
                    flows.push((src, dst));
                }
            }
        }
        if flows.is_empty() {
            flows.push((
                rng.gen_range(1..=params.ports),
                rng.gen_range(1..=params.ports),
            ));
        }
        let flows = flows
            .into_iter()
            .map(|(src, dst)| FlowRecord {
                src: src as i64,
                dst: dst as i64,
                size: Number::from_int(
                    rng.gen_range(params.size_range.0..=params.size_range.1) as i64
                ),
            })
            .collect();
        coflows.push(CoflowRecord {
            weight: Number::from_int(weight as i64),
            release: Number::from_int(release as i64),
            flows,
        });
    }
    let record = InstanceRecord {
        ports: params.ports as i64,
        cores,
        coflows,
    };
    Ok(validate(&record)?)
}

// ---------------------------------------------------------------------------
// Files

pub fn parse(text: &str, path: &Path) -> Result<CoflowInstance, InstanceError> {
    let record: InstanceRecord =
        serde_json::from_str(text).map_err(|source| InstanceError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(validate(&record)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<CoflowInstance, InstanceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

pub fn to_json(inst: &CoflowInstance) -> String {
    serde_json::to_string_pretty(&inst.to_record()).expect("instance record serializes")
}

pub fn save(inst: &CoflowInstance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    fs::write(path, to_json(inst) + "\n").map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}
