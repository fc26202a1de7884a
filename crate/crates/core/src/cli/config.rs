//! JSON scenario files: schema, defaults and validation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdi_evaluation::{CalibrationOptions, DecisionWindow, FlagOptions};
use crate::network_model::{build_topology, AgentModel, FaultSubstitution, Topology};
use crate::simulation::{AgentSignals, RecordLevel, SignalSpec, SimOptions};
use crate::synthesis::SynthesisOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Validation(msg.into()))
}

/// A matrix as nested rows; a flat list is read as a column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Column(Vec<f64>),
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows((0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
    }

    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixSpec::Column(v) => Ok(DMatrix::from_column_slice(v.len(), 1, v)),
            MatrixSpec::Rows(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return invalid(format!("{what} has rows of different lengths"));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                if flat.iter().any(|v| !v.is_finite()) {
                    return invalid(format!("{what} has non-finite entries"));
                }
                Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Faults enter through the input matrices: B_f = B, D_f = 0, D_d = 0.
    Actuator,
    /// One additive fault on every output channel: B_f = 0, D_f = 1, D_d = 0.
    Sensor,
    /// Fault and disturbance matrices are used as given.
    #[default]
    Custom,
}

impl ScenarioKind {
    pub fn substitution(self) -> FaultSubstitution {
        match self {
            ScenarioKind::Actuator => FaultSubstitution::Actuator,
            ScenarioKind::Sensor => FaultSubstitution::Sensor,
            ScenarioKind::Custom => FaultSubstitution::AsModeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: usize,
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
    #[serde(default)]
    pub bf: Option<MatrixSpec>,
    #[serde(default)]
    pub df: Option<MatrixSpec>,
    #[serde(default)]
    pub bd: Option<MatrixSpec>,
    #[serde(default)]
    pub dd: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsSpec {
    pub agent: usize,
    #[serde(default)]
    pub u: Vec<SignalSpec>,
    #[serde(default)]
    pub d: Vec<SignalSpec>,
    #[serde(default)]
    pub f: Vec<SignalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub agent: usize,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: f64,
    pub h: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self { horizon: 80.0, h: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// RMS window in seconds.
    pub window: f64,
    pub runs: usize,
    pub safety: f64,
    /// Transient excluded from calibration and flagging, in seconds.
    pub settle: f64,
    /// Dwell above threshold needed to raise a flag, in seconds.
    pub debounce: f64,
    pub windows: Vec<DecisionWindow>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self { window: 2.0, runs: 20, safety: 1.2, settle: 5.0, debounce: 0.2, windows: Vec::new() }
    }
}

/// Matrices replaced by the scenario kind, echoed for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub agent: usize,
    pub matrix: String,
    pub value: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub kind: ScenarioKind,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub topology: Option<TopologySpec>,
    #[serde(default)]
    pub signals: Vec<SignalsSpec>,
    #[serde(default)]
    pub initial_states: Vec<InitialState>,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub seed: u64,
    /// Output only; recomputed from `kind` on every load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<Discarded>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Effective configuration with every default filled in.
    pub config: ScenarioConfig,
    /// Physical agents after the kind's overrides.
    pub agents: Vec<AgentModel>,
    pub topology: Topology,
    pub substitution: FaultSubstitution,
    pub signals: Vec<AgentSignals>,
    pub x0: Vec<DVector<f64>>,
}

impl Scenario {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn sim_options(&self, record: RecordLevel) -> SimOptions {
        let s = &self.config.simulation;
        SimOptions { horizon: s.horizon, h: s.h, seed: self.config.seed, record }
    }

    pub fn window_samples(&self) -> usize {
        ((self.config.evaluation.window / self.config.simulation.h).round() as usize).max(1)
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        let e = &self.config.evaluation;
        CalibrationOptions { runs: e.runs, safety: e.safety, settle: e.settle, window: self.window_samples() }
    }

    pub fn flag_options(&self) -> FlagOptions {
        let e = &self.config.evaluation;
        FlagOptions { settle: e.settle, debounce: (e.debounce / self.config.simulation.h).round() as usize }
    }

    pub fn windows(&self) -> Vec<DecisionWindow> {
        let e = &self.config.evaluation;
        if e.windows.is_empty() {
            vec![DecisionWindow { name: "horizon".into(), start: 0.0, stop: self.config.simulation.horizon, expected: None }]
        } else {
            e.windows.clone()
        }
    }

    /// Re-applies command-line overrides and revalidates.
    pub fn with_overrides(&self, seed: Option<u64>, h: Option<f64>, horizon: Option<f64>) -> Result<Scenario, ConfigError> {
        let mut cfg = self.config.clone();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(h) = h {
            cfg.simulation.h = h;
        }
        if let Some(t) = horizon {
            cfg.simulation.horizon = t;
            // A shortened run keeps only the decision windows it still reaches, clipped to its end.
            cfg.evaluation.windows.retain(|w| w.start < t);
            for w in &mut cfg.evaluation.windows {
                w.stop = w.stop.min(t);
            }
        }
        validate(cfg)
    }
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ConfigError> {
    let cfg: ScenarioConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    validate(cfg)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

fn positive(v: f64, what: &str) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        invalid(format!("{what} must be positive, got {v}"))
    }
}

pub fn validate(mut cfg: ScenarioConfig) -> Result<Scenario, ConfigError> {
    let n = cfg.agents.len();
    if n < 2 {
        return invalid("at least two agents are required");
    }
    cfg.agents.sort_by_key(|a| a.id);
    for (k, a) in cfg.agents.iter().enumerate() {
        if a.id != k + 1 {
            return invalid(format!("agent ids must be 1..={n} without gaps, found {}", a.id));
        }
    }
    let Some(topo_spec) = cfg.topology.clone() else {
        return invalid("topology required");
    };
    for &(i, j) in &topo_spec.edges {
        for id in [i, j] {
            if id == 0 || id > n {
                return invalid(format!("agent id out of range: edge ({i}, {j}) with {n} agents"));
            }
        }
    }
    let topology = build_topology(n, &topo_spec.edges).map_err(|e| ConfigError::Validation(e.to_string()))?;

    let sim = cfg.simulation;
    positive(sim.h, "simulation.h")?;
    positive(sim.horizon, "simulation.horizon")?;
    let steps = sim.horizon / sim.h;
    if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
        return invalid(format!("simulation.horizon {} is not a multiple of h = {}", sim.horizon, sim.h));
    }
    let ev = &cfg.evaluation;
    positive(ev.window, "evaluation.window")?;
    if ev.runs == 0 {
        return invalid("evaluation.runs must be at least 1");
    }
    if !(ev.safety >= 1.0) {
        return invalid(format!("evaluation.safety must be at least 1, got {}", ev.safety));
    }
    if !(ev.settle >= 0.0) || !(ev.debounce >= 0.0) {
        return invalid("evaluation.settle and evaluation.debounce must be nonnegative");
    }
    for w in &ev.windows {
        if !(w.start < w.stop) || w.start < 0.0 || w.stop > sim.horizon + 1e-9 {
            return invalid(format!("decision window '{}' [{}, {}] must lie inside [0, {}]", w.name, w.start, w.stop, sim.horizon));
        }
        if let Some(e) = w.expected {
            if e == 0 || e > n {
                return invalid(format!("agent id out of range: window '{}' expects agent {e}", w.name));
            }
        }
    }
    cfg.synthesis.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;

    let mut agents = Vec::with_capacity(n);
    let mut discarded = Vec::new();
    for spec in cfg.agents.iter_mut() {
        let id = spec.id;
        let name = |m: &str| format!("agent {id} {m}");
        let a = spec.a.to_matrix(&name("a"))?;
        let b = spec.b.to_matrix(&name("b"))?;
        let c = spec.c.to_matrix(&name("c"))?;
        let (nx, ny) = (a.nrows(), c.nrows());
        let opt = |m: &Option<MatrixSpec>, what: &str, rows: usize| -> Result<DMatrix<f64>, ConfigError> {
            match m {
                Some(m) => m.to_matrix(&name(what)),
                None => Ok(DMatrix::zeros(rows, 0)),
            }
        };
        let mut bf = opt(&spec.bf, "bf", nx)?;
        let mut df = opt(&spec.df, "df", ny)?;
        let bd = opt(&spec.bd, "bd", nx)?;
        let mut dd = opt(&spec.dd, "dd", ny)?;
        if bd.ncols() != dd.ncols() && dd.ncols() == 0 {
            dd = DMatrix::zeros(ny, bd.ncols());
        }
        if bf.ncols() != df.ncols() && df.ncols() == 0 {
            df = DMatrix::zeros(ny, bf.ncols());
        }
        let (new_bf, new_df) = match cfg.kind {
            ScenarioKind::Actuator => (Some(b.clone()), Some(DMatrix::zeros(ny, b.ncols()))),
            ScenarioKind::Sensor => (Some(DMatrix::zeros(nx, 1)), Some(DMatrix::from_element(ny, 1, 1.0))),
            ScenarioKind::Custom => (None, None),
        };
        if let (Some(nbf), Some(ndf)) = (new_bf, new_df) {
            let zero_dd = DMatrix::zeros(ny, dd.ncols());
            for (label, old, new) in [("bf", &bf, &nbf), ("df", &df, &ndf), ("dd", &dd, &zero_dd)] {
                if old != new && old.ncols() > 0 {
                    discarded.push(Discarded { agent: id, matrix: label.into(), value: MatrixSpec::from_matrix(old) });
                }
            }
            bf = nbf;
            df = ndf;
            dd = zero_dd;
        }
        spec.bf.get_or_insert_with(|| MatrixSpec::from_matrix(&bf));
        spec.df.get_or_insert_with(|| MatrixSpec::from_matrix(&df));
        spec.bd.get_or_insert_with(|| MatrixSpec::from_matrix(&bd));
        spec.dd.get_or_insert_with(|| MatrixSpec::from_matrix(&dd));
        let agent = AgentModel::new(id, a, b, bf, bd, c, df, dd).map_err(|e| ConfigError::Validation(e.to_string()))?;
        agents.push(agent);
    }
    cfg.discarded = discarded;

    let mut signals = vec![AgentSignals::default(); n];
    cfg.signals.sort_by_key(|s| s.agent);
    for s in &cfg.signals {
        if s.agent == 0 || s.agent > n {
            return invalid(format!("agent id out of range: signals for agent {}", s.agent));
        }
        let a = &agents[s.agent - 1];
        for (what, list, dim) in [("u", &s.u, a.nu()), ("d", &s.d, a.nd()), ("f", &s.f, a.nf())] {
            if list.len() > dim {
                return invalid(format!("agent {} has {} {what} signals for {dim} channels", s.agent, list.len()));
            }
            for spec in list {
                spec.validate().map_err(|e| ConfigError::Validation(format!("agent {} {what} signal: {e}", s.agent)))?;
            }
        }
        signals[s.agent - 1] = AgentSignals { u: s.u.clone(), d: s.d.clone(), f: s.f.clone() };
    }
    let mut x0 = agents.iter().map(|a| DVector::zeros(a.nx())).collect::<Vec<_>>();
    cfg.initial_states.sort_by_key(|s| s.agent);
    for s in &cfg.initial_states {
        if s.agent == 0 || s.agent > n {
            return invalid(format!("agent id out of range: initial state for agent {}", s.agent));
        }
        let nx = agents[s.agent - 1].nx();
        if s.x0.len() != nx {
            return invalid(format!("initial state of agent {} has length {}, expected {nx}", s.agent, s.x0.len()));
        }
        x0[s.agent - 1] = DVector::from_vec(s.x0.clone());
    }
    cfg.topology = Some(topo_spec);
    let substitution = cfg.kind.substitution();
    Ok(Scenario { config: cfg, agents, topology, substitution, signals, x0 })
}
