//! Residual evaluation, threshold calibration, fault flags and isolation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network_model::Topology;
use crate::simulation::{Series, Trajectory};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("invalid evaluation setup: {0}")]
    Invalid(String),
    #[error("calibration run {run} failed: {source}")]
    Calibration { run: usize, source: Box<dyn std::error::Error + Send + Sync> },
    #[error("no threshold for agent {0}")]
    MissingThreshold(usize),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

/// Causal sliding RMS: J(t_k) = sqrt(sum of the last L squared samples / min(k+1, L)).
pub fn evaluate_residual(r: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must hold at least one sample");
    let mut out = Vec::with_capacity(r.len());
    // Compensated running sum keeps long windows from drifting.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    // Total magnitude that passed through the running sum since it was last rebuilt.
    let mut traffic = 0.0f64;
    let add = |sum: &mut f64, comp: &mut f64, v: f64| {
        let y = v - *comp;
        let t = *sum + y;
        *comp = (t - *sum) - y;
        *sum = t;
    };
    for k in 0..r.len() {
        let sq = r[k] * r[k];
        add(&mut sum, &mut comp, sq);
        traffic += sq;
        if k >= window {
            let old = r[k - window] * r[k - window];
            add(&mut sum, &mut comp, -old);
            traffic += old;
        }
        // Removing a large sample next to small ones cancels most digits of the sum;
        // the window is then summed afresh so the result stays accurate to rounding.
        if sum < 1e-3 * traffic {
            let lo = (k + 1).saturating_sub(window);
            sum = 0.0;
            comp = 0.0;
            for v in &r[lo..=k] {
                add(&mut sum, &mut comp, v * v);
            }
            traffic = sum;
        }
        let count = (k + 1).min(window) as f64;
        out.push((sum.max(0.0) / count).sqrt());
    }
    out
}

/// Evaluation function of every residual channel of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEvaluation {
    pub id: usize,
    pub neighbors: Vec<usize>,
    pub block_rows: usize,
    pub j: Series,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSeries {
    pub h: f64,
    pub window: usize,
    pub time: Vec<f64>,
    pub agents: Vec<AgentEvaluation>,
}

impl EvaluationSeries {
    pub fn agent(&self, id: usize) -> Option<&AgentEvaluation> {
        self.agents.iter().find(|a| a.id == id)
    }
}

pub fn evaluate_trajectory(traj: &Trajectory, window: usize) -> EvaluationSeries {
    let agents = traj
        .agents
        .iter()
        .map(|tr| {
            let cols: Vec<Vec<f64>> = (0..tr.r.dim).map(|c| evaluate_residual(&tr.r.column(c), window)).collect();
            let n = traj.time.len();
            let mut j = Series::new(tr.r.dim, n);
            for k in 0..n {
                for col in &cols {
                    j.data.push(col[k]);
                }
            }
            AgentEvaluation { id: tr.id, neighbors: tr.neighbors().to_vec(), block_rows: tr.block_rows(), j }
        })
        .collect();
    EvaluationSeries { h: traj.h, window, time: traj.time.clone(), agents }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub runs: usize,
    pub safety: f64,
    /// Samples before this time are ignored when taking the supremum.
    pub settle: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentThreshold {
    pub agent: usize,
    pub threshold: f64,
    /// Largest fault-free J over all runs, per residual channel.
    pub channel_sup: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub runs: usize,
    pub safety: f64,
    pub settle: f64,
    pub window: usize,
    pub seeds: Vec<u64>,
    pub agents: Vec<AgentThreshold>,
}

impl Thresholds {
    pub fn get(&self, agent: usize) -> Result<f64> {
        self.agents.iter().find(|a| a.agent == agent).map(|a| a.threshold).ok_or(EvaluationError::MissingThreshold(agent))
    }
}

fn first_index_at(time: &[f64], t: f64, h: f64) -> usize {
    time.iter().position(|&s| s >= t - 1e-9 * h.max(1e-300)).unwrap_or(time.len())
}

/// Per-channel supremum of J over t >= settle.
fn channel_sup(ev: &AgentEvaluation, time: &[f64], settle: f64, h: f64) -> Vec<f64> {
    let k0 = first_index_at(time, settle, h);
    let mut sup = vec![0.0f64; ev.j.dim];
    for k in k0..time.len() {
        for (c, v) in ev.j.row(k).iter().enumerate() {
            sup[c] = sup[c].max(*v);
        }
    }
    sup
}

/// Monte Carlo thresholds: sup over fault-free runs, channels and t >= settle, times the safety factor.
///
/// `run(seed)` must simulate one fault-free run; runs are executed in parallel
/// and combined in seed order, so the result does not depend on scheduling.
pub fn calibrate_thresholds<F, E>(opts: &CalibrationOptions, seeds: &[u64], run: F) -> Result<Thresholds>
where
    F: Fn(u64) -> std::result::Result<Trajectory, E> + Sync,
    E: std::error::Error + Send + Sync + 'static,
{
    if opts.runs == 0 || seeds.len() != opts.runs {
        return Err(EvaluationError::Invalid(format!("need {} seeds, got {}", opts.runs, seeds.len())));
    }
    if !(opts.safety >= 1.0) {
        return Err(EvaluationError::Invalid(format!("safety factor must be at least 1, got {}", opts.safety)));
    }
    let sups: Vec<Vec<(usize, Vec<f64>)>> = seeds
        .par_iter()
        .enumerate()
        .map(|(m, &seed)| {
            let traj = run(seed).map_err(|e| EvaluationError::Calibration { run: m, source: Box::new(e) })?;
            let ev = evaluate_trajectory(&traj, opts.window);
            Ok(ev.agents.iter().map(|a| (a.id, channel_sup(a, &ev.time, opts.settle, ev.h))).collect())
        })
        .collect::<Result<_>>()?;
    let mut combined: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for run in &sups {
        for (id, sup) in run {
            let e = combined.entry(*id).or_insert_with(|| vec![0.0; sup.len()]);
            for (a, b) in e.iter_mut().zip(sup) {
                *a = a.max(*b);
            }
        }
    }
    let agents = combined
        .into_iter()
        .map(|(agent, channel_sup)| {
            let top = channel_sup.iter().copied().fold(0.0, f64::max);
            AgentThreshold { agent, threshold: opts.safety * top, channel_sup }
        })
        .collect();
    Ok(Thresholds { runs: opts.runs, safety: opts.safety, settle: opts.settle, window: opts.window, seeds: seeds.to_vec(), agents })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionWindow {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    /// Agent the window is expected to isolate; `None` means no fault.
    #[serde(default)]
    pub expected: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagOptions {
    /// Flags are only raised for t >= settle.
    pub settle: f64,
    /// A channel flags once J exceeds the threshold for this many consecutive samples.
    pub debounce: usize,
}

/// Flag bits of one residual block (one neighbor).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternBlock {
    pub neighbor: usize,
    pub channels: Vec<bool>,
}

impl PatternBlock {
    pub fn is_set(&self) -> bool {
        self.channels.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPattern {
    pub agent: usize,
    pub blocks: Vec<PatternBlock>,
}

impl FaultPattern {
    /// One digit per neighbor block, e.g. "101".
    pub fn block_bits(&self) -> String {
        self.blocks.iter().map(|b| if b.is_set() { '1' } else { '0' }).collect()
    }

    /// Channel digits grouped by block, e.g. "11|00|10".
    pub fn channel_bits(&self) -> String {
        self.blocks
            .iter()
            .map(|b| b.channels.iter().map(|&c| if c { '1' } else { '0' }).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn all_set(&self) -> bool {
        !self.blocks.is_empty() && self.blocks.iter().all(PatternBlock::is_set)
    }

    pub fn set_blocks(&self) -> Vec<usize> {
        self.blocks.iter().filter(|b| b.is_set()).map(|b| b.neighbor).collect()
    }
}

/// Debounced flags of every agent over [start, stop].
pub fn generate_flags(ev: &EvaluationSeries, th: &Thresholds, window: &DecisionWindow, opts: &FlagOptions) -> Result<Vec<FaultPattern>> {
    let from = window.start.max(opts.settle);
    let k0 = first_index_at(&ev.time, from, ev.h);
    let k1 = ev.time.iter().rposition(|&t| t <= window.stop + 1e-9 * ev.h).map_or(0, |k| k + 1);
    let need = opts.debounce.max(1);
    ev.agents
        .iter()
        .map(|a| {
            let level = th.get(a.id)?;
            let mut flags = vec![false; a.j.dim];
            let mut run = vec![0usize; a.j.dim];
            for k in k0..k1.max(k0) {
                for (c, v) in a.j.row(k).iter().enumerate() {
                    if *v > level {
                        run[c] += 1;
                        if run[c] >= need {
                            flags[c] = true;
                        }
                    } else {
                        run[c] = 0;
                    }
                }
            }
            let blocks = a
                .neighbors
                .iter()
                .enumerate()
                .map(|(b, &j)| PatternBlock { neighbor: j, channels: flags[b * a.block_rows..(b + 1) * a.block_rows].to_vec() })
                .collect();
            Ok(FaultPattern { agent: a.id, blocks })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    NoFault,
    /// Isolated from the agent's own pattern, optionally confirmed by neighbors.
    AgentFaulty { agent: usize, rules: Vec<u8> },
    /// A single observer singles out one neighbor.
    NeighborFaulty { observer: usize, agent: usize },
    /// Several observers single out the same agent whose own pattern is not fully set.
    InferredFaulty { agent: usize, observers: Vec<usize> },
    Ambiguous { candidates: Vec<usize> },
}

impl Verdict {
    pub fn culprit(&self) -> Option<usize> {
        match self {
            Verdict::AgentFaulty { agent, .. } | Verdict::NeighborFaulty { agent, .. } | Verdict::InferredFaulty { agent, .. } => {
                Some(*agent)
            }
            _ => None,
        }
    }
}

/// Combines the local patterns of one decision window into a verdict.
///
/// Rule 1: all of agent i's blocks set means i is faulty.
/// Rule 2: exactly one set block j means neighbor j is faulty.
/// Rule 3: when rule 1 fires for several agents, the one the others single
/// out through rule 2 is the culprit.
pub fn isolate(patterns: &[FaultPattern], topo: &Topology) -> Verdict {
    let full: BTreeSet<usize> = patterns.iter().filter(|p| p.all_set()).map(|p| p.agent).collect();
    let pointers: Vec<(usize, usize)> = patterns
        .iter()
        .filter_map(|p| {
            let set = p.set_blocks();
            (set.len() == 1).then(|| (p.agent, set[0]))
        })
        .collect();
    let any_set = patterns.iter().any(|p| !p.set_blocks().is_empty());
    if !any_set {
        return Verdict::NoFault;
    }

    let supporters = |c: usize| -> Vec<usize> { pointers.iter().filter(|(k, j)| *j == c && *k != c).map(|(k, _)| *k).collect() };
    // Another fully flagged agent is explained by c when its only neighbor is c.
    let explained = |c: usize, q: usize| q == c || topo.neighbors(q).map(|n| n == [c]).unwrap_or(false);
    let contradicts = |c: usize| pointers.iter().any(|(k, j)| *j != c && !full.contains(k) && !explained(c, *k));

    match full.len() {
        1 => {
            let c = *full.iter().next().unwrap();
            if contradicts(c) {
                let mut cands: BTreeSet<usize> = pointers.iter().map(|(_, j)| *j).collect();
                cands.insert(c);
                Verdict::Ambiguous { candidates: cands.into_iter().collect() }
            } else {
                let mut rules = vec![1];
                if !supporters(c).is_empty() {
                    rules.push(2);
                }
                Verdict::AgentFaulty { agent: c, rules }
            }
        }
        0 => {
            let targets: BTreeSet<usize> = pointers.iter().map(|(_, j)| *j).collect();
            match (targets.len(), pointers.len()) {
                (1, 1) => Verdict::NeighborFaulty { observer: pointers[0].0, agent: pointers[0].1 },
                (1, _) => Verdict::InferredFaulty { agent: pointers[0].1, observers: pointers.iter().map(|(k, _)| *k).collect() },
                _ => {
                    let mut cands: BTreeSet<usize> = targets;
                    for p in patterns {
                        cands.extend(p.set_blocks());
                    }
                    Verdict::Ambiguous { candidates: cands.into_iter().collect() }
                }
            }
        }
        _ => {
            let backed: Vec<usize> = full.iter().copied().filter(|&c| !supporters(c).is_empty()).collect();
            let resolved: Vec<usize> = backed.into_iter().filter(|&c| full.iter().all(|&q| explained(c, q) || supporters(c).contains(&q))).collect();
            match resolved.as_slice() {
                [c] if !contradicts(*c) => Verdict::AgentFaulty { agent: *c, rules: vec![1, 2, 3] },
                _ => Verdict::Ambiguous { candidates: full.into_iter().collect() },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network_model::build_topology;

    fn pattern(agent: usize, blocks: &[(usize, bool)]) -> FaultPattern {
        FaultPattern { agent, blocks: blocks.iter().map(|&(n, s)| PatternBlock { neighbor: n, channels: vec![s, false] }).collect() }
    }

    fn example_topology() -> Topology {
        build_topology(4, &[(1, 2), (1, 3), (1, 4), (2, 3)]).unwrap()
    }

    fn patterns(bits: [&str; 4]) -> Vec<FaultPattern> {
        let t = example_topology();
        (1..=4)
            .map(|i| {
                let nb = t.neighbors(i).unwrap();
                pattern(i, &nb.iter().zip(bits[i - 1].chars()).map(|(&n, c)| (n, c == '1')).collect::<Vec<_>>())
            })
            .collect()
    }

    #[test]
    fn rms_examples() {
        let j = evaluate_residual(&[1.0, 1.0, 1.0, 1.0], 2);
        assert_eq!(j, vec![1.0, 1.0, 1.0, 1.0]);
        let j = evaluate_residual(&[3.0, 4.0], 2);
        assert_eq!(j[0], 3.0);
        assert!((j[1] - 12.5f64.sqrt()).abs() < 1e-15);
        let j = evaluate_residual(&[0.0, 2.0, 0.0], 1);
        assert_eq!(j, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn four_agent_patterns() {
        let t = example_topology();
        assert_eq!(isolate(&patterns(["111", "10", "10", "1"]), &t), Verdict::AgentFaulty { agent: 1, rules: vec![1, 2, 3] });
        assert_eq!(isolate(&patterns(["001", "00", "00", "1"]), &t), Verdict::AgentFaulty { agent: 4, rules: vec![1, 2] });
        assert_eq!(isolate(&patterns(["010", "01", "11", "0"]), &t), Verdict::AgentFaulty { agent: 3, rules: vec![1, 2] });
        assert_eq!(isolate(&patterns(["000", "00", "00", "0"]), &t), Verdict::NoFault);
    }

    #[test]
    fn neighbor_and_ambiguous_verdicts() {
        let t = example_topology();
        assert_eq!(isolate(&patterns(["010", "00", "00", "0"]), &t), Verdict::NeighborFaulty { observer: 1, agent: 3 });
        assert_eq!(isolate(&patterns(["010", "01", "00", "0"]), &t), Verdict::InferredFaulty { agent: 3, observers: vec![1, 2] });
        assert!(matches!(isolate(&patterns(["110", "00", "00", "0"]), &t), Verdict::Ambiguous { .. }));
    }

    #[test]
    fn pattern_strings() {
        let p = FaultPattern {
            agent: 1,
            blocks: vec![
                PatternBlock { neighbor: 2, channels: vec![true, false] },
                PatternBlock { neighbor: 3, channels: vec![false, false] },
            ],
        };
        assert_eq!(p.block_bits(), "10");
        assert_eq!(p.channel_bits(), "10|00");
    }
}
