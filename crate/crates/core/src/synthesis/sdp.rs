//! Small dense semidefinite programs solved by a primal log-det barrier
//! path-following method.
//!
//! A program is `minimize c^T x` subject to affine blocks
//! `F_k(x) = F_k0 + sum_i x_i F_ki >= 0`. Scalar inequalities are 1x1 blocks.
//! A phase-I problem with a common shift variable finds a strictly feasible
//! start, so every iterate stays in the interior.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("program is infeasible (phase-I optimum {shift:.3e} >= 0)")]
    Infeasible { shift: f64 },
    #[error("solver stalled: {0}")]
    Stalled(String),
}

/// One affine matrix constraint F0 + sum x_i F_i >= 0.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
    /// Whether phase I may relax this block. Box bounds are kept hard.
    pub shiftable: bool,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, f) in &self.terms {
            m += f * x[*i];
        }
        m
    }

    pub fn min_eigenvalue(&self, x: &DVector<f64>) -> f64 {
        let m = self.eval(x);
        let m = (&m + m.transpose()) * 0.5;
        m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n_vars: usize,
    /// Minimized objective c.
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    /// Stop once the barrier duality gap nu/t drops below gap_tol * (1 + |objective|).
    pub gap_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    pub max_newton_per_center: usize,
    pub max_newton_total: usize,
    /// Relative gap accepted when centering stalls on an ill-conditioned barrier.
    pub accept_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, mu: 10.0, max_newton_per_center: 200, max_newton_total: 5000, accept_tol: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub gap: f64,
    pub newton_steps: usize,
}

impl SdpProblem {
    pub fn barrier_dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn is_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.blocks.iter().all(|b| sym_cholesky(&b.eval(x)).is_some())
    }

    /// Minimum eigenvalue of each block at x.
    pub fn margins(&self, x: &DVector<f64>) -> Vec<(String, f64)> {
        self.blocks.iter().map(|b| (b.name.clone(), b.min_eigenvalue(x))).collect()
    }
}

fn sym_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let s = (m + m.transpose()) * 0.5;
    s.cholesky().map(|c| c.unpack())
}

struct Derivatives {
    value: f64,
    grad: DVector<f64>,
    /// Rows are the weighted upper-triangle entries of G_i = L^-1 F_i L^-T for
    /// every block, so the barrier Hessian is jac^T jac.
    jac: DMatrix<f64>,
    /// Weighted upper triangle of the identity per block; the barrier gradient is -jac^T ones.
    ones: DVector<f64>,
    tc: DVector<f64>,
}

/// Barrier value t c^T x - sum log det F_k(x), or None outside the interior.
fn barrier_value(p: &SdpProblem, t: f64, x: &DVector<f64>) -> Option<f64> {
    let mut v = t * p.objective.dot(x);
    for b in &p.blocks {
        let l = sym_cholesky(&b.eval(x))?;
        v -= 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    }
    Some(v)
}

fn derivatives(p: &SdpProblem, t: f64, x: &DVector<f64>) -> Option<Derivatives> {
    let m = p.n_vars;
    let rows: usize = p.blocks.iter().filter(|b| !b.terms.is_empty()).map(|b| b.dim() * (b.dim() + 1) / 2).sum();
    let mut jac = DMatrix::<f64>::zeros(rows.max(m), m);
    let mut ones = DVector::<f64>::zeros(rows.max(m));
    let tc = &p.objective * t;
    let mut grad = tc.clone();
    let mut value = t * p.objective.dot(x);
    let mut r0 = 0;
    for b in &p.blocks {
        let l = sym_cholesky(&b.eval(x))?;
        value -= 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let n = b.dim();
        if b.terms.is_empty() {
            continue;
        }
        // <A, B> over symmetric matrices as a dot product of weighted upper triangles.
        let mut k = r0;
        for i in 0..n {
            ones[k] = 1.0;
            k += n - i;
        }
        for (i, f) in &b.terms {
            let w = l.solve_lower_triangular(f)?;
            let gi = l.solve_lower_triangular(&w.transpose())?;
            grad[*i] -= gi.trace();
            let mut k = r0;
            for r in 0..n {
                jac[(k, *i)] += gi[(r, r)];
                k += 1;
                for c in r + 1..n {
                    jac[(k, *i)] += std::f64::consts::SQRT_2 * 0.5 * (gi[(r, c)] + gi[(c, r)]);
                    k += 1;
                }
            }
        }
        r0 += n * (n + 1) / 2;
    }
    Some(Derivatives { value, grad, jac, ones, tc })
}

/// Solves jac^T jac dx = jac^T ones - t c through a QR factorization of jac,
/// adding a ridge only if jac is numerically rank deficient.
fn newton_direction(d: &Derivatives) -> Option<DVector<f64>> {
    let m = d.jac.ncols();
    let mut ridge = 0.0;
    for _ in 0..8 {
        let (a, rhs) = if ridge == 0.0 {
            (d.jac.clone(), d.ones.clone())
        } else {
            let rows = d.jac.nrows();
            let mut a = DMatrix::zeros(rows + m, m);
            a.view_mut((0, 0), (rows, m)).copy_from(&d.jac);
            a.view_mut((rows, 0), (m, m)).fill_diagonal(ridge);
            let mut rhs = DVector::zeros(rows + m);
            rhs.rows_mut(0, rows).copy_from(&d.ones);
            (a, rhs)
        };
        let qr = a.qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let diag_min = r.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if diag_min > 1e-13 * diag_max && diag_max > 0.0 {
            let qtb = qr.q().tr_mul(&rhs);
            let ls = r.solve_upper_triangular(&qtb.rows(0, m).clone_owned())?;
            let y = r.tr_solve_upper_triangular(&d.tc)?;
            let tc_part = r.solve_upper_triangular(&y)?;
            let dx = ls - tc_part;
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        ridge = if ridge == 0.0 { 1e-7 * diag_max.max(1e-150) } else { ridge * 10.0 };
    }
    None
}

/// Damped Newton minimization of the barrier at fixed t.
fn center<F: Fn(&DVector<f64>) -> bool>(
    p: &SdpProblem,
    t: f64,
    x: &mut DVector<f64>,
    opts: &SdpOptions,
    steps: &mut usize,
    stop_early: &F,
) -> Result<(), SdpError> {
    for _ in 0..opts.max_newton_per_center {
        if *steps >= opts.max_newton_total {
            return Err(SdpError::Stalled(format!("Newton budget of {} steps exhausted", opts.max_newton_total)));
        }
        let d = derivatives(p, t, x).ok_or_else(|| SdpError::Stalled("iterate left the interior".into()))?;
        let dx = newton_direction(&d).ok_or_else(|| SdpError::Stalled("singular Newton system".into()))?;
        let slope = d.grad.dot(&dx);
        let decrement = -slope;
        if !decrement.is_finite() {
            return Err(SdpError::Stalled("non-finite Newton decrement".into()));
        }
        if decrement <= 1e-11 {
            return Ok(());
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = &*x + &dx * alpha;
            if let Some(v) = barrier_value(p, t, &trial) {
                if v <= d.value + 0.25 * alpha * slope {
                    break Some((trial, v));
                }
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break None;
            }
        };
        *steps += 1;
        match accepted {
            // Rounding floor reached: the current point is as central as double precision allows.
            Some((_, v)) if decrement < 1e-6 && v >= d.value => return Ok(()),
            Some((trial, _)) => *x = trial,
            None if decrement < 1e-6 => return Ok(()),
            None => return Err(SdpError::Stalled(format!("line search failed (decrement {decrement:.3e})"))),
        }
        if stop_early(x) {
            return Ok(());
        }
    }
    Err(SdpError::Stalled("centering did not converge".into()))
}

/// Follows the central path from an interior point. `stop(x, gap)` ends the
/// path early after any centering.
fn path_follow<F: Fn(&DVector<f64>, f64) -> bool>(
    p: &SdpProblem,
    mut x: DVector<f64>,
    opts: &SdpOptions,
    stop: F,
) -> Result<SdpSolution, SdpError> {
    let nu = p.barrier_dimension() as f64;
    let mut steps = 0;
    let mut t = 1.0;
    let mut last: Option<SdpSolution> = None;
    loop {
        let inner_stop = |v: &DVector<f64>| stop(v, f64::INFINITY);
        if let Err(e) = center(p, t, &mut x, opts, &mut steps, &inner_stop) {
            return match last {
                Some(sol) if sol.gap < opts.accept_tol * (1.0 + sol.objective.abs()) => {
                    Ok(SdpSolution { newton_steps: steps, ..sol })
                }
                _ => Err(e),
            };
        }
        let objective = p.objective.dot(&x);
        let gap = nu / t;
        if stop(&x, gap) || gap < opts.gap_tol * (1.0 + objective.abs()) {
            return Ok(SdpSolution { x, objective, gap, newton_steps: steps });
        }
        last = Some(SdpSolution { x: x.clone(), objective, gap, newton_steps: steps });
        t *= opts.mu;
    }
}

/// Phase I: minimize s subject to F_k(x) + s I >= 0 on shiftable blocks, s >= -1.
pub fn find_strictly_feasible(
    p: &SdpProblem,
    start: &DVector<f64>,
    opts: &SdpOptions,
) -> Result<(DVector<f64>, usize), SdpError> {
    if p.is_strictly_feasible(start) {
        return Ok((start.clone(), 0));
    }
    let m = p.n_vars;
    let s_idx = m;
    let mut worst = 0.0f64;
    let mut blocks = Vec::with_capacity(p.blocks.len() + 1);
    for b in &p.blocks {
        let mut nb = b.clone();
        if b.shiftable {
            worst = worst.min(b.min_eigenvalue(start));
            nb.terms.push((s_idx, DMatrix::identity(b.dim(), b.dim())));
        } else if b.min_eigenvalue(start) <= 0.0 {
            return Err(SdpError::Stalled(format!("start point violates hard block '{}'", b.name)));
        }
        blocks.push(nb);
    }
    blocks.push(LmiBlock {
        name: "phase1_floor".into(),
        constant: DMatrix::from_element(1, 1, 1.0),
        terms: vec![(s_idx, DMatrix::from_element(1, 1, 1.0))],
        shiftable: false,
    });
    let mut objective = DVector::zeros(m + 1);
    objective[s_idx] = 1.0;
    let phase1 = SdpProblem { n_vars: m + 1, objective, blocks };
    let mut x = DVector::zeros(m + 1);
    x.rows_mut(0, m).copy_from(start);
    x[s_idx] = -worst + 1.0;
    // Stops once the shift is negative, or once the central-path lower bound
    // s - nu/t on the phase-I optimum proves infeasibility.
    let sol = path_follow(&phase1, x, &SdpOptions { gap_tol: 1e-12, ..*opts }, |v, gap| v[s_idx] < 0.0 || v[s_idx] - gap > 0.0)?;
    if sol.x[s_idx] < 0.0 {
        let x = sol.x.rows(0, m).clone_owned();
        if p.is_strictly_feasible(&x) {
            return Ok((x, sol.newton_steps));
        }
    }
    Err(SdpError::Infeasible { shift: sol.x[s_idx] })
}

/// Solves the program from `start` (phase I is run if `start` is not interior).
pub fn solve(p: &SdpProblem, start: &DVector<f64>, opts: &SdpOptions) -> Result<SdpSolution, SdpError> {
    let (x0, phase1_steps) = find_strictly_feasible(p, start, opts)?;
    let mut sol = path_follow(p, x0, opts, |_, _| false)?;
    sol.newton_steps += phase1_steps;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn linear_program_on_interval() {
        // minimize x subject to x - 1 >= 0, 3 - x >= 0
        let p = SdpProblem {
            n_vars: 1,
            objective: DVector::from_element(1, 1.0),
            blocks: vec![
                LmiBlock { name: "lo".into(), constant: scalar(-1.0), terms: vec![(0, scalar(1.0))], shiftable: true },
                LmiBlock { name: "hi".into(), constant: scalar(3.0), terms: vec![(0, scalar(-1.0))], shiftable: true },
            ],
        };
        let sol = solve(&p, &DVector::zeros(1), &SdpOptions::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-7, "{}", sol.x[0]);
    }

    #[test]
    fn max_eigenvalue_bound() {
        // minimize t subject to t I - M >= 0  ->  t = lambda_max(M)
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let p = SdpProblem {
            n_vars: 1,
            objective: DVector::from_element(1, 1.0),
            blocks: vec![LmiBlock { name: "eig".into(), constant: -m.clone(), terms: vec![(0, DMatrix::identity(2, 2))], shiftable: true }],
        };
        let sol = solve(&p, &DVector::zeros(1), &SdpOptions::default()).unwrap();
        let expected = (5.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.x[0] - expected).abs() < 1e-7);
    }

    #[test]
    fn infeasible_detected() {
        // x >= 1 and x <= 0
        let p = SdpProblem {
            n_vars: 1,
            objective: DVector::from_element(1, 1.0),
            blocks: vec![
                LmiBlock { name: "lo".into(), constant: scalar(-1.0), terms: vec![(0, scalar(1.0))], shiftable: true },
                LmiBlock { name: "hi".into(), constant: scalar(0.0), terms: vec![(0, scalar(-1.0))], shiftable: true },
            ],
        };
        let r = solve(&p, &DVector::zeros(1), &SdpOptions::default());
        assert!(matches!(r, Err(SdpError::Infeasible { .. })), "{r:?}");
    }
}
