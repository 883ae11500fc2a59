//! Runtime monitors, Bayesian-network risk assessment and behavior-tree
//! arbitration on top of the navigation pipeline.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{mixture_moments, PredictiveSet};
use crate::env::{SceneClass, VelocityCommand};
use crate::metrics::{self, BandwidthRule, MIN_MODE_SAMPLES};
use crate::perception::{latent_dispersion, LatentSampleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DependabilityError {
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("network has a cycle through '{0}'")]
    Cyclic(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("invalid evidence on '{node}': {reason}")]
    InvalidEvidence { node: String, reason: String },
    #[error("evidence has zero probability")]
    ImpossibleEvidence,
    #[error("monitor {0:?} is not mapped to a network node")]
    UnmappedMonitor(MonitorId),
    #[error("invalid behavior tree: {0}")]
    InvalidTree(String),
    #[error("invalid threshold band [{low}, {high}]")]
    InvalidBand { low: f64, high: f64 },
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T, E = DependabilityError> = std::result::Result<T, E>;

// ---------------------------------------------------------------- monitors

/// Maps a raw monitor value to a belief in `[0, 1]`, linear inside the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub low: f64,
    pub high: f64,
}

impl ThresholdBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low <= high) {
            return Err(DependabilityError::InvalidBand { low, high });
        }
        Ok(Self { low, high })
    }

    pub fn belief(&self, raw: f64) -> f64 {
        if raw.is_nan() {
            return 1.0;
        }
        if raw <= self.low {
            // A degenerate band is a step at its threshold.
            return if self.low == self.high && raw == self.high { 1.0 } else { 0.0 };
        }
        if raw >= self.high {
            return 1.0;
        }
        (raw - self.low) / (self.high - self.low)
    }
}

/// Band from the nominal (single-gate) and off-nominal (no-gate) value
/// distributions: 95th percentile of the former to the 5th of the latter,
/// swapped when they overlap.
pub fn calibrate_band(nominal: &[f64], off_nominal: &[f64]) -> Result<ThresholdBand> {
    let a = metrics::density_summary(nominal)?.q95;
    let b = metrics::density_summary(off_nominal)?.q05;
    ThresholdBand::new(a.min(b), a.max(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorId {
    OutputSigma,
    LatentDispersion,
    Multimodality,
}

impl MonitorId {
    pub const ALL: [MonitorId; 3] = [MonitorId::OutputSigma, MonitorId::LatentDispersion, MonitorId::Multimodality];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub monitor: MonitorId,
    pub raw: f64,
    pub belief: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub output_sigma: ThresholdBand,
    pub latent_dispersion: ThresholdBand,
    /// Applied to the mode count; `(1, 2)` makes two or more modes certain.
    pub multimodality: ThresholdBand,
    /// Command dimension checked for multimodality (1 = lateral velocity).
    pub mode_dimension: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            output_sigma: ThresholdBand { low: 0.5, high: 1.0 },
            latent_dispersion: ThresholdBand { low: 0.5, high: 2.0 },
            multimodality: ThresholdBand { low: 1.0, high: 2.0 },
            mode_dimension: 1,
        }
    }
}

/// Total predicted standard deviation: root of the summed mixture variances.
pub fn output_sigma(pred: &PredictiveSet) -> Result<f64> {
    if pred.is_empty() {
        return Err(DependabilityError::MissingInput("predictive set"));
    }
    let (_, var) = mixture_moments(pred).map_err(|_| DependabilityError::MissingInput("predictive set"))?;
    Ok(var.iter().sum::<f64>().sqrt())
}

/// Number of modes among component means; sets too small for a density
/// estimate count as unimodal.
pub fn mode_count(pred: &PredictiveSet, dim: usize) -> Result<usize> {
    if pred.len() < MIN_MODE_SAMPLES {
        return Ok(1);
    }
    Ok(metrics::detect_modes(&pred.means(dim), BandwidthRule::Silverman)?.mode_count)
}

pub fn run_monitors(
    pred: &PredictiveSet,
    latents: &LatentSampleSet,
    config: &MonitorConfig,
) -> Result<Vec<MonitorVerdict>> {
    if latents.is_empty() {
        return Err(DependabilityError::MissingInput("latent samples"));
    }
    let sigma = output_sigma(pred)?;
    let dispersion = if latents.len() < 2 {
        0.0
    } else {
        latent_dispersion(latents).map_err(|_| DependabilityError::MissingInput("latent samples"))?
    };
    let modes = mode_count(pred, config.mode_dimension)? as f64;
    Ok(vec![
        MonitorVerdict {
            monitor: MonitorId::OutputSigma,
            raw: sigma,
            belief: config.output_sigma.belief(sigma),
        },
        MonitorVerdict {
            monitor: MonitorId::LatentDispersion,
            raw: dispersion,
            belief: config.latent_dispersion.belief(dispersion),
        },
        MonitorVerdict {
            monitor: MonitorId::Multimodality,
            raw: modes,
            belief: config.multimodality.belief(modes),
        },
    ])
}

// ---------------------------------------------------------- bayesian network

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
    /// One row per parent configuration, last parent varying fastest.
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetworkFile {
    version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
    nodes: Vec<NodeSpec>,
}

/// Discrete Bayesian network; construction validates the DAG and CPTs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct BayesNet {
    pub version: u32,
    pub description: String,
    nodes: Vec<NodeSpec>,
    parent_idx: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl TryFrom<NetworkFile> for BayesNet {
    type Error = DependabilityError;
    fn try_from(f: NetworkFile) -> Result<Self> {
        let mut net = BayesNet::new(f.nodes)?;
        net.version = f.version;
        net.description = f.description;
        Ok(net)
    }
}

impl From<BayesNet> for NetworkFile {
    fn from(n: BayesNet) -> Self {
        NetworkFile {
            version: n.version,
            description: n.description,
            nodes: n.nodes,
        }
    }
}

const DEFAULT_NETWORK: &str = include_str!("../assets/default_bn.json");

#[derive(Clone, Debug, PartialEq)]
pub enum Evidence {
    Hard(usize),
    /// Likelihood per state, applied as a virtual child.
    Soft(Vec<f64>),
}

impl BayesNet {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.states.is_empty() {
                return Err(DependabilityError::InvalidNetwork(format!("'{}' has no states", n.name)));
            }
            if index.insert(n.name.clone(), i).is_some() {
                return Err(DependabilityError::InvalidNetwork(format!("duplicate node '{}'", n.name)));
            }
        }
        let mut parent_idx = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let idx: Vec<usize> = n
                .parents
                .iter()
                .map(|p| index.get(p).copied().ok_or_else(|| DependabilityError::UnknownNode(p.clone())))
                .collect::<Result<_>>()?;
            let rows: usize = idx.iter().map(|&p| nodes[p].states.len()).product();
            if n.cpt.len() != rows {
                return Err(DependabilityError::InvalidNetwork(format!(
                    "'{}' needs {rows} CPT rows, has {}",
                    n.name,
                    n.cpt.len()
                )));
            }
            for row in &n.cpt {
                let sum: f64 = row.iter().sum();
                if row.len() != n.states.len() || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(DependabilityError::InvalidNetwork(format!("bad CPT row in '{}'", n.name)));
                }
            }
            parent_idx.push(idx);
        }
        let net = Self {
            version: 1,
            description: String::new(),
            nodes,
            parent_idx,
            index,
        };
        net.check_acyclic()?;
        Ok(net)
    }

    /// The shipped risk network.
    pub fn default_network() -> Self {
        Self::from_json(DEFAULT_NETWORK).expect("bundled network is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DependabilityError::InvalidNetwork(e.to_string()))
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit(net: &BayesNet, i: usize, mark: &mut [u8]) -> Result<()> {
            match mark[i] {
                1 => return Err(DependabilityError::Cyclic(net.nodes[i].name.clone())),
                2 => return Ok(()),
                _ => {}
            }
            mark[i] = 1;
            for &p in &net.parent_idx[i] {
                visit(net, p, mark)?;
            }
            mark[i] = 2;
            Ok(())
        }
        let mut mark = vec![0u8; self.nodes.len()];
        (0..self.nodes.len()).try_for_each(|i| visit(self, i, &mut mark))
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn states(&self, name: &str) -> Option<&[String]> {
        self.node_index(name).map(|i| self.nodes[i].states.as_slice())
    }

    fn cpt_factor(&self, i: usize) -> Factor {
        let mut vars = self.parent_idx[i].clone();
        vars.push(i);
        let card = vars.iter().map(|&v| self.nodes[v].states.len()).collect();
        let values = self.nodes[i].cpt.iter().flatten().copied().collect();
        Factor { vars, card, values }
    }

    /// Exact posterior marginals of every node given `evidence`.
    pub fn infer(&self, evidence: &BTreeMap<String, Evidence>) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut factors: Vec<Factor> = (0..self.nodes.len()).map(|i| self.cpt_factor(i)).collect();
        for (name, ev) in evidence {
            let i = self.node_index(name).ok_or_else(|| DependabilityError::UnknownNode(name.clone()))?;
            let k = self.nodes[i].states.len();
            let bad = |reason: &str| DependabilityError::InvalidEvidence {
                node: name.clone(),
                reason: reason.into(),
            };
            let lik = match ev {
                Evidence::Hard(s) if *s < k => (0..k).map(|j| if j == *s { 1.0 } else { 0.0 }).collect(),
                Evidence::Hard(_) => return Err(bad("state out of range")),
                Evidence::Soft(l) if l.len() != k => return Err(bad("likelihood length")),
                Evidence::Soft(l) if l.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) => {
                    return Err(bad("likelihood must be finite and nonnegative"))
                }
                Evidence::Soft(l) if l.iter().all(|&x| x == 0.0) => return Err(bad("all-zero likelihood")),
                Evidence::Soft(l) => l.clone(),
            };
            factors.push(Factor {
                vars: vec![i],
                card: vec![k],
                values: lik,
            });
        }
        let mut out = BTreeMap::new();
        for q in 0..self.nodes.len() {
            let f = eliminate_all_but(factors.clone(), q);
            let z: f64 = f.values.iter().sum();
            if !(z > 0.0) {
                return Err(DependabilityError::ImpossibleEvidence);
            }
            out.insert(self.nodes[q].name.clone(), f.values.iter().map(|v| v / z).collect());
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
struct Factor {
    vars: Vec<usize>,
    card: Vec<usize>,
    /// Row-major over `vars`, last variable fastest.
    values: Vec<f64>,
}

impl Factor {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.vars.len()];
        for k in (0..self.vars.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.card[k + 1];
        }
        s
    }

    fn product(&self, other: &Factor) -> Factor {
        let mut vars = self.vars.clone();
        let mut card = self.card.clone();
        for (v, c) in other.vars.iter().zip(&other.card) {
            if !vars.contains(v) {
                vars.push(*v);
                card.push(*c);
            }
        }
        let size: usize = card.iter().product();
        let map = |f: &Factor| -> Vec<usize> {
            let st = f.strides();
            vars.iter()
                .map(|v| f.vars.iter().position(|u| u == v).map_or(0, |p| st[p]))
                .collect()
        };
        let (sa, sb) = (map(self), map(other));
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            // odometer increment, last variable fastest
            for k in (0..vars.len()).rev() {
                assign[k] += 1;
                ia += sa[k];
                ib += sb[k];
                if assign[k] < card[k] {
                    break;
                }
                ia -= sa[k] * card[k];
                ib -= sb[k] * card[k];
                assign[k] = 0;
            }
        }
        Factor { vars, card, values }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let p = self.vars.iter().position(|&v| v == var).expect("variable in factor");
        let st = self.strides();
        let (outer, inner, k) = (self.values.len() / (st[p] * self.card[p]), st[p], self.card[p]);
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..k {
                for i in 0..inner {
                    values[o * inner + i] += self.values[(o * k + j) * inner + i];
                }
            }
        }
        let mut vars = self.vars.clone();
        let mut card = self.card.clone();
        vars.remove(p);
        card.remove(p);
        Factor { vars, card, values }
    }
}

/// Variable elimination with a greedy smallest-product ordering.
fn eliminate_all_but(mut factors: Vec<Factor>, keep: usize) -> Factor {
    loop {
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for f in &factors {
            for (v, c) in f.vars.iter().zip(&f.card) {
                if *v != keep && !candidates.iter().any(|x| x.0 == *v) {
                    candidates.push((*v, *c));
                }
            }
        }
        let Some(&(var, _)) = candidates.iter().min_by_key(|&&(v, _)| {
            let mut scope: Vec<(usize, usize)> = Vec::new();
            for f in factors.iter().filter(|f| f.vars.contains(&v)) {
                for (u, c) in f.vars.iter().zip(&f.card) {
                    if !scope.iter().any(|s| s.0 == *u) {
                        scope.push((*u, *c));
                    }
                }
            }
            (scope.iter().map(|s| s.1).product::<usize>(), v)
        }) else {
            break;
        };
        let (with, without): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&var));
        let merged = with.iter().skip(1).fold(with[0].clone(), |acc, f| acc.product(f));
        factors = without;
        factors.push(merged.sum_out(var));
    }
    let unit = Factor {
        vars: Vec::new(),
        card: Vec::new(),
        values: vec![1.0],
    };
    let f = factors.iter().fold(unit, |acc, f| acc.product(f));
    debug_assert!(f.vars.len() == 1 && f.vars[0] == keep);
    f
}

// ------------------------------------------------------------------- risk

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Evidence node receiving each monitor's belief (binary, `true` last).
    pub monitor_nodes: BTreeMap<MonitorId, String>,
    /// Critical-event node -> severity; events are binary with `true` last.
    pub severities: BTreeMap<String, f64>,
    pub threshold: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            monitor_nodes: BTreeMap::from([
                (MonitorId::OutputSigma, "HighOutputSigma".to_string()),
                (MonitorId::LatentDispersion, "HighLatentDispersion".to_string()),
                (MonitorId::Multimodality, "Multimodal".to_string()),
            ]),
            severities: BTreeMap::from([("GateMiss".to_string(), 1.0), ("Flyaway".to_string(), 3.0)]),
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub event_posteriors: BTreeMap<String, f64>,
    /// Severities after normalization to sum to one.
    pub severities: BTreeMap<String, f64>,
    pub risk: f64,
}

/// Feeds verdict beliefs into the network as soft evidence `[1 - b, b]` and
/// returns the expected normalized severity of the critical events.
pub fn assess_risk(net: &BayesNet, verdicts: &[MonitorVerdict], config: &RiskConfig) -> Result<RiskEstimate> {
    let mut evidence = BTreeMap::new();
    for v in verdicts {
        let node = config
            .monitor_nodes
            .get(&v.monitor)
            .ok_or(DependabilityError::UnmappedMonitor(v.monitor))?;
        let b = v.belief.clamp(0.0, 1.0);
        evidence.insert(node.clone(), Evidence::Soft(vec![1.0 - b, b]));
    }
    let posteriors = net.infer(&evidence)?;
    let total: f64 = config.severities.values().sum();
    let mut event_posteriors = BTreeMap::new();
    let mut severities = BTreeMap::new();
    let mut risk = 0.0;
    for (event, &sev) in &config.severities {
        let p = posteriors
            .get(event)
            .and_then(|d| d.last().copied())
            .ok_or_else(|| DependabilityError::UnknownNode(event.clone()))?;
        let s = if total > 0.0 { sev / total } else { 0.0 };
        risk += p * s;
        event_posteriors.insert(event.clone(), p);
        severities.insert(event.clone(), s);
    }
    Ok(RiskEstimate {
        event_posteriors,
        severities,
        risk,
    })
}

// ----------------------------------------------------------- behavior tree

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failure,
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Condition {
    /// `None` is an infinite threshold: never satisfied.
    RiskAtLeast { threshold: Option<f64> },
    SceneIs { class: SceneClass },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Action {
    /// Pure yaw rotation in place.
    SearchForGate { yaw_rate: f64 },
    PassThrough,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    SearchForGate,
    PassThrough,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BtNode {
    Sequence(Vec<BtNode>),
    Fallback(Vec<BtNode>),
    Condition(Condition),
    Action(Action),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blackboard {
    pub risk: f64,
    pub pipeline_command: VelocityCommand,
    pub scene: Option<SceneClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutcome {
    pub status: Status,
    pub command: VelocityCommand,
    pub behavior: Behavior,
    /// Leaves evaluated this tick, in order.
    pub visited: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BtNode", into = "BtNode")]
pub struct BehaviorTree {
    root: BtNode,
}

impl TryFrom<BtNode> for BehaviorTree {
    type Error = DependabilityError;
    fn try_from(root: BtNode) -> Result<Self> {
        BehaviorTree::new(root)
    }
}

impl From<BehaviorTree> for BtNode {
    fn from(t: BehaviorTree) -> Self {
        t.root
    }
}

pub const DEFAULT_SEARCH_YAW_RATE: f64 = -0.8;

impl BehaviorTree {
    pub fn new(root: BtNode) -> Result<Self> {
        fn check(n: &BtNode) -> Result<()> {
            match n {
                BtNode::Sequence(c) | BtNode::Fallback(c) if c.is_empty() => {
                    Err(DependabilityError::InvalidTree("composite without children".into()))
                }
                BtNode::Sequence(c) | BtNode::Fallback(c) => c.iter().try_for_each(check),
                BtNode::Condition(Condition::RiskAtLeast { threshold: Some(t) }) if t.is_nan() => {
                    Err(DependabilityError::InvalidTree("NaN threshold".into()))
                }
                BtNode::Action(Action::SearchForGate { yaw_rate }) if !yaw_rate.is_finite() => {
                    Err(DependabilityError::InvalidTree("non-finite search yaw rate".into()))
                }
                _ => Ok(()),
            }
        }
        check(&root)?;
        Ok(Self { root })
    }

    /// `fallback(sequence(risk >= threshold, search), pass_through)`.
    pub fn default_tree(threshold: Option<f64>, search_yaw_rate: f64) -> Result<Self> {
        Self::new(BtNode::Fallback(vec![
            BtNode::Sequence(vec![
                BtNode::Condition(Condition::RiskAtLeast { threshold }),
                BtNode::Action(Action::SearchForGate {
                    yaw_rate: search_yaw_rate,
                }),
            ]),
            BtNode::Action(Action::PassThrough),
        ]))
    }

    pub fn root(&self) -> &BtNode {
        &self.root
    }

    pub fn tick(&self, bb: &Blackboard) -> TickOutcome {
        let mut out = TickOutcome {
            status: Status::Failure,
            command: VelocityCommand::ZERO,
            behavior: Behavior::None,
            visited: 0,
        };
        out.status = tick_node(&self.root, bb, &mut out);
        out
    }
}

fn tick_node(node: &BtNode, bb: &Blackboard, out: &mut TickOutcome) -> Status {
    match node {
        BtNode::Sequence(children) => {
            for c in children {
                match tick_node(c, bb, out) {
                    Status::Success => continue,
                    s => return s,
                }
            }
            Status::Success
        }
        BtNode::Fallback(children) => {
            for c in children {
                match tick_node(c, bb, out) {
                    Status::Failure => continue,
                    s => return s,
                }
            }
            Status::Failure
        }
        BtNode::Condition(c) => {
            out.visited += 1;
            let ok = match c {
                Condition::RiskAtLeast { threshold: Some(t) } => bb.risk >= *t,
                Condition::RiskAtLeast { threshold: None } => false,
                Condition::SceneIs { class } => bb.scene == Some(*class),
            };
            if ok {
                Status::Success
            } else {
                Status::Failure
            }
        }
        BtNode::Action(a) => {
            out.visited += 1;
            match a {
                Action::SearchForGate { yaw_rate } => {
                    out.command = VelocityCommand::new(0.0, 0.0, 0.0, *yaw_rate);
                    out.behavior = Behavior::SearchForGate;
                    Status::Running
                }
                Action::PassThrough => {
                    out.command = bb.pipeline_command;
                    out.behavior = Behavior::PassThrough;
                    Status::Success
                }
            }
        }
    }
}
