//! Fixed-step simulation of the agent network, the distributed observers and
//! the residual generators.
//!
//! All signals are held constant over a step, so the network together with
//! every observer is one LTI system driven by a piecewise-constant input. The
//! classical RK4 recipe is applied once to the joint system matrices to obtain
//! the one-step maps, which are then iterated.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network_model::{build_relative_model, AgentModel, NetworkError, Topology};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("state diverged at t = {t:.4} s")]
    NonFiniteState { t: f64 },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("invalid simulation setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("trajectory was recorded without {0}")]
    NotRecorded(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory csv: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SimulationError>;

/// One scalar signal channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Step {
        amplitude: f64,
        #[serde(default)]
        start: f64,
    },
    Pulse {
        amplitude: f64,
        start: f64,
        stop: f64,
    },
    /// Zero-order-hold Gaussian noise with per-step standard deviation sqrt(power / h).
    Noise {
        power: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl SignalSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            SignalSpec::Pulse { start, stop, .. } if !(start < stop) => Err(format!("pulse needs start < stop, got [{start}, {stop})")),
            SignalSpec::Noise { power, .. } if !(*power >= 0.0) => Err(format!("noise power must be nonnegative, got {power}")),
            _ => Ok(()),
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(self, SignalSpec::Noise { .. })
    }
}

/// Standard normal sample number `k` of the stream keyed by `seed`.
pub fn noise_sample(seed: u64, k: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.sample(StandardNormal)
}

fn step_index(t: f64, h: f64) -> u64 {
    (t / h + 1e-9).floor().max(0.0) as u64
}

/// Value of a signal at time t, sample-and-hold with step h.
pub fn sample_signal(spec: &SignalSpec, t: f64, h: f64) -> f64 {
    match *spec {
        SignalSpec::Zero => 0.0,
        SignalSpec::Step { amplitude, start } => {
            if t >= start {
                amplitude
            } else {
                0.0
            }
        }
        SignalSpec::Pulse { amplitude, start, stop } => {
            if t >= start && t < stop {
                amplitude
            } else {
                0.0
            }
        }
        SignalSpec::Noise { power, seed } => (power / h).sqrt() * noise_sample(seed, step_index(t, h)),
    }
}

/// Independent stream seed for one noise channel of one agent.
pub fn sub_seed(master: u64, agent: usize, channel: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((agent as u64) << 32) | channel as u64);
    rng.next_u64()
}

/// Input, disturbance and fault channels of one agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSignals {
    pub u: Vec<SignalSpec>,
    pub d: Vec<SignalSpec>,
    pub f: Vec<SignalSpec>,
}

impl AgentSignals {
    pub fn without_faults(&self) -> Self {
        Self { f: vec![SignalSpec::Zero; self.f.len()], ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordLevel {
    /// States, estimates, residuals and signals.
    Full,
    /// Residuals only, for Monte Carlo runs.
    Residuals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub h: f64,
    pub seed: u64,
    pub record: RecordLevel,
}

/// Row-major samples of a vector signal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, samples: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * samples) }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrace {
    pub id: usize,
    /// Neighborhood stacking order (id first, then neighbors ascending).
    pub order: Vec<usize>,
    pub x: Series,
    pub xhat: Series,
    pub r: Series,
    pub u: Series,
    pub d: Series,
    pub f: Series,
}

impl AgentTrace {
    pub fn neighbors(&self) -> &[usize] {
        &self.order[1..]
    }

    /// Residual channels per neighbor block.
    pub fn block_rows(&self) -> usize {
        self.r.dim / self.neighbors().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub time: Vec<f64>,
    pub record: RecordLevel,
    pub agents: Vec<AgentTrace>,
}

impl Trajectory {
    pub fn agent(&self, id: usize) -> Result<&AgentTrace> {
        self.agents.iter().find(|a| a.id == id).ok_or(SimulationError::UnknownAgent(id))
    }
}

/// e_Ni = x_Ni - xhat_Ni at every sample.
pub fn extract_error(traj: &Trajectory, i: usize) -> Result<Series> {
    if traj.record != RecordLevel::Full {
        return Err(SimulationError::NotRecorded("states"));
    }
    let tr = traj.agent(i)?;
    let members: Vec<&AgentTrace> = tr.order.iter().map(|&k| traj.agent(k)).collect::<Result<_>>()?;
    let mut out = Series::new(tr.xhat.dim, traj.time.len());
    for k in 0..traj.time.len() {
        let xh = tr.xhat.row(k);
        let mut c = 0;
        for m in &members {
            for &v in m.x.row(k) {
                out.data.push(v - xh[c]);
                c += 1;
            }
        }
    }
    Ok(out)
}

struct Layout {
    x_off: Vec<usize>,
    xh_off: Vec<usize>,
    u_off: Vec<usize>,
    d_off: Vec<usize>,
    f_off: Vec<usize>,
    y_off: Vec<usize>,
    nx: usize,
    nw: usize,
    ny: usize,
}

/// Joint network-plus-observer system x' = M x + G w with residual read-outs.
struct JointSystem {
    layout: Layout,
    m: DMatrix<f64>,
    g: DMatrix<f64>,
    /// Residual r_i = Rx_i X + Rw_i w.
    rx: Vec<DMatrix<f64>>,
    rw: Vec<DMatrix<f64>>,
    orders: Vec<Vec<usize>>,
}

fn index_of(agents: &[AgentModel], id: usize) -> Result<usize> {
    agents.iter().position(|a| a.id == id).ok_or(SimulationError::UnknownAgent(id))
}

impl JointSystem {
    fn new(agents: &[AgentModel], topo: &Topology, gains: &[DMatrix<f64>]) -> Result<Self> {
        let n = agents.len();
        if gains.len() != n {
            return Err(SimulationError::Invalid(format!("{} gains for {} agents", gains.len(), n)));
        }
        let rels = agents.iter().map(|a| build_relative_model(agents, topo, a.id)).collect::<std::result::Result<Vec<_>, _>>()?;

        let mut layout = Layout {
            x_off: vec![],
            xh_off: vec![],
            u_off: vec![],
            d_off: vec![],
            f_off: vec![],
            y_off: vec![],
            nx: 0,
            nw: 0,
            ny: 0,
        };
        for a in agents {
            layout.x_off.push(layout.nx);
            layout.nx += a.nx();
        }
        for r in &rels {
            layout.xh_off.push(layout.nx);
            layout.nx += r.a.nrows();
        }
        for a in agents {
            layout.u_off.push(layout.nw);
            layout.nw += a.nu();
        }
        for a in agents {
            layout.d_off.push(layout.nw);
            layout.nw += a.nd();
        }
        for a in agents {
            layout.f_off.push(layout.nw);
            layout.nw += a.nf();
        }
        for a in agents {
            layout.y_off.push(layout.ny);
            layout.ny += a.ny();
        }
        let (nx, nw, ny) = (layout.nx, layout.nw, layout.ny);

        // Outputs of every agent: Y = Cy X + Dy w.
        let mut cy = DMatrix::zeros(ny, nx);
        let mut dy = DMatrix::zeros(ny, nw);
        let mut m = DMatrix::zeros(nx, nx);
        let mut g = DMatrix::zeros(nx, nw);
        for (k, a) in agents.iter().enumerate() {
            let (xo, yo) = (layout.x_off[k], layout.y_off[k]);
            cy.view_mut((yo, xo), a.c.shape()).copy_from(&a.c);
            dy.view_mut((yo, layout.f_off[k]), a.df.shape()).copy_from(&a.df);
            dy.view_mut((yo, layout.d_off[k]), a.dd.shape()).copy_from(&a.dd);
            m.view_mut((xo, xo), a.a.shape()).copy_from(&a.a);
            g.view_mut((xo, layout.u_off[k]), a.b.shape()).copy_from(&a.b);
            g.view_mut((xo, layout.f_off[k]), a.bf.shape()).copy_from(&a.bf);
            g.view_mut((xo, layout.d_off[k]), a.bd.shape()).copy_from(&a.bd);
        }

        let mut rx = Vec::with_capacity(n);
        let mut rw = Vec::with_capacity(n);
        let mut orders = Vec::with_capacity(n);
        for (k, rel) in rels.iter().enumerate() {
            let l = &gains[k];
            let (mu, xi) = (rel.a.nrows(), rel.c.nrows());
            if l.shape() != (mu, xi) {
                return Err(SimulationError::Invalid(format!("gain of agent {} is {:?}, expected ({mu}, {xi})", rel.agent_id, l.shape())));
            }
            // z_i = S_i Y, one block y_i - y_j per neighbor.
            let p = agents[k].ny();
            let mut s = DMatrix::zeros(xi, ny);
            for (b, &j) in rel.neighbors().iter().enumerate() {
                let jo = layout.y_off[index_of(agents, j)?];
                let io = layout.y_off[k];
                for c in 0..p {
                    s[(b * p + c, io + c)] += 1.0;
                    s[(b * p + c, jo + c)] -= 1.0;
                }
            }
            let zx = &s * &cy;
            let zw = &s * &dy;
            let ho = layout.xh_off[k];
            let mut r_x = zx.clone();
            let mut block = r_x.view_mut((0, ho), (xi, mu));
            block -= &rel.c;
            rx.push(r_x);
            rw.push(zw.clone());

            // xhat' = (A - L C) xhat + Bu u_N + L z.
            let acl = &rel.a - l * &rel.c;
            m.view_mut((ho, ho), (mu, mu)).copy_from(&acl);
            let lzx = l * &zx;
            let mut rows = m.rows_mut(ho, mu);
            rows += &lzx;
            let lzw = l * &zw;
            let mut grows = g.rows_mut(ho, mu);
            grows += &lzw;
            let mut col = 0;
            for &member in &rel.order {
                let idx = index_of(agents, member)?;
                let b = &agents[idx].b;
                let uo = layout.u_off[idx];
                for r in 0..b.nrows() {
                    for c in 0..b.ncols() {
                        g[(ho + col + r, uo + c)] += b[(r, c)];
                    }
                }
                col += b.nrows();
            }
            orders.push(rel.order.clone());
        }
        Ok(Self { layout, m, g, rx, rw, orders })
    }

    /// One classical RK4 step for ZOH input, applied to the system maps.
    fn rk4_maps(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.layout.nx;
        let eye = DMatrix::<f64>::identity(n, n);
        let k1 = self.m.clone();
        let k2 = &self.m * (&eye + &k1 * (h / 2.0));
        let k3 = &self.m * (&eye + &k2 * (h / 2.0));
        let k4 = &self.m * (&eye + &k3 * h);
        let phi = &eye + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let g1 = self.g.clone();
        let g2 = &self.m * &g1 * (h / 2.0) + &self.g;
        let g3 = &self.m * &g2 * (h / 2.0) + &self.g;
        let g4 = &self.m * &g3 * h + &self.g;
        let gamma = (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (h / 6.0);
        (phi, gamma)
    }
}

struct SignalTable {
    specs: Vec<SignalSpec>,
    seeds: Vec<u64>,
}

impl SignalTable {
    fn new(agents: &[AgentModel], layout: &Layout, signals: &[AgentSignals], master: u64) -> Result<Self> {
        let mut specs = vec![SignalSpec::Zero; layout.nw];
        let mut seeds = vec![0u64; layout.nw];
        for (k, a) in agents.iter().enumerate() {
            let sig = signals.get(k).cloned().unwrap_or_default();
            for (group, list, off, dim) in [
                (0usize, &sig.u, layout.u_off[k], a.nu()),
                (1, &sig.d, layout.d_off[k], a.nd()),
                (2, &sig.f, layout.f_off[k], a.nf()),
            ] {
                if list.len() > dim {
                    return Err(SimulationError::Invalid(format!("agent {} has {} signals for {} channels", a.id, list.len(), dim)));
                }
                for (c, spec) in list.iter().enumerate() {
                    spec.validate().map_err(SimulationError::Invalid)?;
                    specs[off + c] = spec.clone();
                    if let SignalSpec::Noise { seed, .. } = spec {
                        seeds[off + c] = sub_seed(master ^ seed, a.id, group * 1024 + c);
                    }
                }
            }
        }
        Ok(Self { specs, seeds })
    }

    fn fill(&self, k: u64, t: f64, h: f64, w: &mut DVector<f64>) {
        for (c, spec) in self.specs.iter().enumerate() {
            w[c] = match *spec {
                SignalSpec::Noise { power, .. } => (power / h).sqrt() * noise_sample(self.seeds[c], k),
                ref other => sample_signal(other, t, h),
            };
        }
    }
}

/// Simulates the network and all distributed observers from the given gains.
///
/// Observers start at zero. `gains[k]` and `signals[k]` belong to `agents[k]`;
/// `x0[k]` is that agent's initial state (an empty vector means zero).
pub fn simulate_network(
    agents: &[AgentModel],
    topo: &Topology,
    gains: &[DMatrix<f64>],
    signals: &[AgentSignals],
    x0: &[DVector<f64>],
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(opts.h > 0.0) || !(opts.horizon >= 0.0) {
        return Err(SimulationError::Invalid("step and horizon must be positive".into()));
    }
    let steps_f = opts.horizon / opts.h;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-6 * steps_f.max(1.0) {
        return Err(SimulationError::Invalid(format!("horizon {} is not a multiple of h = {}", opts.horizon, opts.h)));
    }
    let sys = JointSystem::new(agents, topo, gains)?;
    let (phi, gamma) = sys.rk4_maps(opts.h);
    let table = SignalTable::new(agents, &sys.layout, signals, opts.seed)?;
    let lay = &sys.layout;

    let mut x = DVector::<f64>::zeros(lay.nx);
    for (k, a) in agents.iter().enumerate() {
        match x0.get(k) {
            Some(v) if v.len() == a.nx() => x.rows_mut(lay.x_off[k], a.nx()).copy_from(v),
            Some(v) if v.is_empty() => {}
            None => {}
            Some(v) => {
                return Err(SimulationError::Invalid(format!("initial state of agent {} has length {}, expected {}", a.id, v.len(), a.nx())))
            }
        }
    }

    let full = opts.record == RecordLevel::Full;
    let samples = steps + 1;
    let mut traces: Vec<AgentTrace> = agents
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let mu = sys.orders[k].iter().map(|&m| agents[index_of(agents, m).unwrap()].nx()).sum();
            let dim = |d: usize| if full { d } else { 0 };
            AgentTrace {
                id: a.id,
                order: sys.orders[k].clone(),
                x: Series::new(dim(a.nx()), samples),
                xhat: Series::new(dim(mu), samples),
                r: Series::new(sys.rx[k].nrows(), samples),
                u: Series::new(dim(a.nu()), samples),
                d: Series::new(dim(a.nd()), samples),
                f: Series::new(dim(a.nf()), samples),
            }
        })
        .collect();

    let mut w = DVector::<f64>::zeros(lay.nw);
    let mut next = DVector::<f64>::zeros(lay.nx);
    let mut r = Vec::new();
    let mut time = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 * opts.h;
        time.push(t);
        table.fill(k as u64, t, opts.h, &mut w);
        for (ai, tr) in traces.iter_mut().enumerate() {
            let rv = &sys.rx[ai] * &x + &sys.rw[ai] * &w;
            r.clear();
            r.extend(rv.iter());
            tr.r.data.extend_from_slice(&r);
            if full {
                let a = &agents[ai];
                tr.x.data.extend(x.rows(lay.x_off[ai], a.nx()).iter());
                tr.xhat.data.extend(x.rows(lay.xh_off[ai], tr.xhat.dim).iter());
                tr.u.data.extend(w.rows(lay.u_off[ai], a.nu()).iter());
                tr.d.data.extend(w.rows(lay.d_off[ai], a.nd()).iter());
                tr.f.data.extend(w.rows(lay.f_off[ai], a.nf()).iter());
            }
        }
        if k + 1 < samples {
            next.gemv(1.0, &phi, &x, 0.0);
            next.gemv(1.0, &gamma, &w, 1.0);
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                return Err(SimulationError::NonFiniteState { t: (k + 1) as f64 * opts.h });
            }
        }
    }
    Ok(Trajectory { h: opts.h, time, record: opts.record, agents: traces })
}

/// Shortest-exact formatting with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header_for(tr: &AgentTrace) -> Vec<String> {
    let i = tr.id;
    let mut h = Vec::new();
    h.extend((1..=tr.x.dim).map(|k| format!("a{i}_x{k}")));
    h.extend((1..=tr.xhat.dim).map(|k| format!("a{i}_xh{k}")));
    let p = tr.block_rows();
    for &j in tr.neighbors() {
        h.extend((1..=p).map(|k| format!("a{i}_r{j}_{k}")));
    }
    h.extend((1..=tr.u.dim).map(|k| format!("a{i}_u{k}")));
    h.extend((1..=tr.d.dim).map(|k| format!("a{i}_d{k}")));
    h.extend((1..=tr.f.dim).map(|k| format!("a{i}_f{k}")));
    h
}

/// Writes the trajectory as CSV: time, then per agent states, estimates, residuals and signals.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    for tr in &traj.agents {
        header.extend(header_for(tr));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (k, t) in traj.time.iter().enumerate() {
        row.clear();
        row.push(format_f64(*t));
        for tr in &traj.agents {
            for s in [&tr.x, &tr.xhat, &tr.r, &tr.u, &tr.d, &tr.f] {
                if s.dim > 0 {
                    row.extend(s.row(k).iter().map(|v| format_f64(*v)));
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SimulationError::Csv(e.into()))?;
    Ok(())
}

#[derive(Clone, Copy)]
enum Field {
    X,
    Xh,
    R { neighbor: usize },
    U,
    D,
    F,
}

fn parse_column(name: &str) -> Option<(usize, Field)> {
    let rest = name.strip_prefix('a')?;
    let (id, tail) = rest.split_once('_')?;
    let id: usize = id.parse().ok()?;
    let field = if let Some(t) = tail.strip_prefix("xh") {
        t.parse::<usize>().ok()?;
        Field::Xh
    } else if let Some(t) = tail.strip_prefix('x') {
        t.parse::<usize>().ok()?;
        Field::X
    } else if let Some(t) = tail.strip_prefix('r') {
        let (j, k) = t.split_once('_')?;
        k.parse::<usize>().ok()?;
        Field::R { neighbor: j.parse().ok()? }
    } else if let Some(t) = tail.strip_prefix('u') {
        t.parse::<usize>().ok()?;
        Field::U
    } else if let Some(t) = tail.strip_prefix('d') {
        t.parse::<usize>().ok()?;
        Field::D
    } else if let Some(t) = tail.strip_prefix('f') {
        t.parse::<usize>().ok()?;
        Field::F
    } else {
        return None;
    };
    Some((id, field))
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.get(0) != Some("time") {
        return Err(SimulationError::Format("first column must be 'time'".into()));
    }
    let mut agents: Vec<AgentTrace> = Vec::new();
    let mut targets = Vec::new();
    for name in header.iter().skip(1) {
        let (id, field) = parse_column(name).ok_or_else(|| SimulationError::Format(format!("unrecognized column '{name}'")))?;
        let pos = match agents.iter().position(|a| a.id == id) {
            Some(p) => p,
            None => {
                agents.push(AgentTrace {
                    id,
                    order: vec![id],
                    x: Series::default(),
                    xhat: Series::default(),
                    r: Series::default(),
                    u: Series::default(),
                    d: Series::default(),
                    f: Series::default(),
                });
                agents.len() - 1
            }
        };
        let tr = &mut agents[pos];
        match field {
            Field::X => tr.x.dim += 1,
            Field::Xh => tr.xhat.dim += 1,
            Field::R { neighbor } => {
                if !tr.order[1..].contains(&neighbor) {
                    tr.order.push(neighbor);
                }
                tr.r.dim += 1
            }
            Field::U => tr.u.dim += 1,
            Field::D => tr.d.dim += 1,
            Field::F => tr.f.dim += 1,
        }
        targets.push((pos, field));
    }
    let mut time = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| SimulationError::Format(format!("bad number '{s}': {e}")));
        time.push(parse(&rec[0])?);
        for (c, (pos, field)) in targets.iter().enumerate() {
            let v = parse(&rec[c + 1])?;
            let tr = &mut agents[*pos];
            let s = match field {
                Field::X => &mut tr.x,
                Field::Xh => &mut tr.xhat,
                Field::R { .. } => &mut tr.r,
                Field::U => &mut tr.u,
                Field::D => &mut tr.d,
                Field::F => &mut tr.f,
            };
            s.data.push(v);
        }
    }
    let h = if time.len() > 1 { time[1] - time[0] } else { 0.0 };
    let record = if agents.iter().all(|a| a.x.dim > 0) { RecordLevel::Full } else { RecordLevel::Residuals };
    Ok(Trajectory { h, time, record, agents })
}
