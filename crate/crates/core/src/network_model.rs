//! Agents, the undirected sensing topology and the stacked relative model of
//! each neighborhood.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix_equations::detectability_violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge ({0}, {0}) is a self loop")]
    SelfLoop(usize),
    #[error("agent id out of range: {id} is not in 1..={n}")]
    OutOfRange { id: usize, n: usize },
    #[error("agent {0} has no neighbors")]
    IsolatedAgent(usize),
    #[error("agent {id}: {what}")]
    InvalidAgent { id: usize, what: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// One agent: x' = A x + B u + Bf f + Bd d, y = C x + Df f + Dd d.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub id: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bf: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub df: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

impl AgentModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bf: DMatrix<f64>,
        bd: DMatrix<f64>,
        c: DMatrix<f64>,
        df: DMatrix<f64>,
        dd: DMatrix<f64>,
    ) -> Result<Self> {
        let agent = Self { id, a, b, bf, bd, c, df, dd };
        agent.validate()?;
        Ok(agent)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(NetworkError::InvalidAgent { id: self.id, what });
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return bad(format!("A is {}x{}", n, self.a.ncols()));
        }
        for (name, m) in [("B", &self.b), ("B_f", &self.bf), ("B_d", &self.bd)] {
            if m.nrows() != n {
                return bad(format!("{name} has {} rows, expected {n}", m.nrows()));
            }
        }
        if self.c.ncols() != n {
            return bad(format!("C has {} columns, expected {n}", self.c.ncols()));
        }
        let ny = self.c.nrows();
        if self.df.shape() != (ny, self.bf.ncols()) {
            return bad(format!("D_f is {:?}, expected ({ny}, {})", self.df.shape(), self.bf.ncols()));
        }
        if self.dd.shape() != (ny, self.bd.ncols()) {
            return bad(format!("D_d is {:?}, expected ({ny}, {})", self.dd.shape(), self.bd.ncols()));
        }
        if ny < self.nf() {
            return bad(format!("needs n_y >= n_f, got n_y={ny}, n_f={}", self.nf()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn nf(&self) -> usize {
        self.bf.ncols()
    }
    pub fn nd(&self) -> usize {
        self.bd.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
}

/// Undirected graph with ascending neighbor lists. Ids are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub n: usize,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        if i == 0 || i > self.n {
            return Err(NetworkError::UnknownAgent(i));
        }
        Ok(&self.neighbors[i - 1])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).map(|nb| nb.contains(&j)).unwrap_or(false)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                if k + 1 < j {
                    out.push((k + 1, j));
                }
            }
        }
        out
    }
}

pub fn build_topology(n: usize, edges: &[(usize, usize)]) -> Result<Topology> {
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in edges {
        for id in [i, j] {
            if id == 0 || id > n {
                return Err(NetworkError::OutOfRange { id, n });
            }
        }
        if i == j {
            return Err(NetworkError::SelfLoop(i));
        }
        neighbors[i - 1].push(j);
        neighbors[j - 1].push(i);
    }
    for (k, nb) in neighbors.iter_mut().enumerate() {
        nb.sort_unstable();
        nb.dedup();
        if nb.is_empty() {
            return Err(NetworkError::IsolatedAgent(k + 1));
        }
    }
    Ok(Topology { n, neighbors })
}

/// Bookkeeping of the stacked dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RelativeDims {
    pub mu: usize,
    pub mu_u: usize,
    pub mu_f: usize,
    pub mu_d: usize,
    pub xi_y: usize,
    pub xi_f: usize,
    pub xi_d: usize,
}

/// Agent i's neighborhood: state x_Ni = (x_i; x_i1; ...), output z_i = (y_i - y_i1; ...).
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeModel {
    pub agent_id: usize,
    /// Stacking order (i, i_1, ..., i_|Ni|).
    pub order: Vec<usize>,
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bf: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub df: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

impl RelativeModel {
    pub fn neighbors(&self) -> &[usize] {
        &self.order[1..]
    }

    pub fn dims(&self) -> RelativeDims {
        RelativeDims {
            mu: self.a.nrows(),
            mu_u: self.bu.ncols(),
            mu_f: self.bf.ncols(),
            mu_d: self.bd.ncols(),
            xi_y: self.c.nrows(),
            xi_f: self.df.ncols(),
            xi_d: self.dd.ncols(),
        }
    }

    /// Output dimension of one neighbor block.
    pub fn block_rows(&self) -> usize {
        self.c.nrows() / self.neighbors().len()
    }
}

/// Block-diagonal stacking.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|m| m.nrows()).sum();
    let cols: usize = blocks.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for m in blocks {
        out.view_mut((r, c), m.shape()).copy_from(*m);
        r += m.nrows();
        c += m.ncols();
    }
    out
}

/// Bar stacking: row block j is [H_i | 0 .. -H_ij (column block j+1) .. 0].
pub fn bar_stack(own: &DMatrix<f64>, others: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let p = own.nrows();
    let cols: usize = own.ncols() + others.iter().map(|m| m.ncols()).sum::<usize>();
    let mut out = DMatrix::zeros(p * others.len(), cols);
    let mut c = own.ncols();
    for (j, m) in others.iter().enumerate() {
        out.view_mut((j * p, 0), own.shape()).copy_from(own);
        out.view_mut((j * p, c), m.shape()).copy_from(&(-*m));
        c += m.ncols();
    }
    out
}

fn find<'a>(agents: &'a [AgentModel], id: usize) -> Result<&'a AgentModel> {
    agents.iter().find(|a| a.id == id).ok_or(NetworkError::UnknownAgent(id))
}

pub fn build_relative_model(agents: &[AgentModel], topo: &Topology, i: usize) -> Result<RelativeModel> {
    let nb = topo.neighbors(i)?;
    if nb.is_empty() {
        return Err(NetworkError::IsolatedAgent(i));
    }
    let mut order = vec![i];
    order.extend_from_slice(nb);
    let members: Vec<&AgentModel> = order.iter().map(|&k| find(agents, k)).collect::<Result<_>>()?;
    let ny = members[0].ny();
    if let Some(m) = members.iter().find(|m| m.ny() != ny) {
        return Err(NetworkError::DimensionMismatch(format!(
            "agent {} has {} outputs, agent {i} has {ny}",
            m.id,
            m.ny()
        )));
    }
    let own = members[0];
    let rest = &members[1..];
    let pick = |f: fn(&AgentModel) -> &DMatrix<f64>| -> Vec<&DMatrix<f64>> { members.iter().map(|m| f(m)).collect() };
    let others = |f: fn(&AgentModel) -> &DMatrix<f64>| -> Vec<&DMatrix<f64>> { rest.iter().map(|m| f(m)).collect() };
    Ok(RelativeModel {
        agent_id: i,
        order,
        a: block_diag(&pick(|m| &m.a)),
        bu: block_diag(&pick(|m| &m.b)),
        bf: block_diag(&pick(|m| &m.bf)),
        bd: block_diag(&pick(|m| &m.bd)),
        c: bar_stack(&own.c, &others(|m| &m.c)),
        df: bar_stack(&own.df, &others(|m| &m.df)),
        dd: bar_stack(&own.dd, &others(|m| &m.dd)),
    })
}

/// Fault-channel substitution applied to a relative model before synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSubstitution {
    /// Use the stacked agent matrices as they are.
    AsModeled,
    /// Faults enter through the inputs: Bf = Bu, Df = 0, Dd = 0.
    Actuator,
    /// Faults enter every relative output: Bf = 0, Df = I.
    Sensor,
}

impl FaultSubstitution {
    pub fn apply(self, rel: &RelativeModel) -> RelativeModel {
        let mut out = rel.clone();
        let (mu, xi) = (rel.a.nrows(), rel.c.nrows());
        match self {
            FaultSubstitution::AsModeled => {}
            FaultSubstitution::Actuator => {
                out.bf = rel.bu.clone();
                out.df = DMatrix::zeros(xi, rel.bu.ncols());
                out.dd = DMatrix::zeros(xi, rel.dd.ncols());
            }
            FaultSubstitution::Sensor => {
                out.bf = DMatrix::zeros(mu, xi);
                out.df = DMatrix::identity(xi, xi);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborhoodReport {
    pub agent_id: usize,
    pub detectable: bool,
    /// Eigenvalue (re, im) that fails the PBH test, if any.
    pub undetectable_mode: Option<(f64, f64)>,
    pub noise_rank: usize,
    pub noise_dim: usize,
}

pub fn validate_neighborhood(rel: &RelativeModel) -> NeighborhoodReport {
    let bad = detectability_violation(&rel.a, &rel.c);
    let r = &rel.dd * rel.dd.transpose();
    let eig = r.clone().symmetric_eigen().eigenvalues;
    let tol = 1e-12 * eig.iter().copied().fold(1.0, f64::max);
    NeighborhoodReport {
        agent_id: rel.agent_id,
        detectable: bad.is_none(),
        undetectable_mode: bad.map(|z| (z.re, z.im)),
        noise_rank: eig.iter().filter(|&&v| v > tol).count(),
        noise_dim: r.nrows(),
    }
}
