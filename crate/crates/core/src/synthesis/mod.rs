//! Observer gain synthesis L = L_nom + dL for one neighborhood.
//!
//! `L_nom` is the H2-optimal filter gain from the Riccati equation. The
//! correction `dL = P^-1 N` comes from a semidefinite program that trades the
//! H2 norm from disturbances to residual (`gamma1`) against the H- index from
//! faults to residual (`gamma2`). A frequency-domain verifier re-checks every
//! result independently of the certificate.

pub mod lmi;
pub mod sdp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix_equations::{
    default_frequency_grid, h2_norm, h_minus_index, solve_filter_care, spectral_abscissa, MatrixError, StateSpace,
};
use crate::network_model::RelativeModel;
use lmi::Affine;
use sdp::{SdpError, SdpOptions, SdpProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("nominal gain: {0}")]
    Nominal(#[from] MatrixError),
    #[error("measurement noise completion impossible: D_d D_d^T has eigenvalue {0:.4} > 1")]
    NoiseCompletion(f64),
    #[error("no certificate at the requested margin: {0}")]
    Infeasible(String),
    #[error("solver stalled: {0}")]
    SolverStalled(String),
    #[error("certificate produced but closed loop is not Hurwitz (abscissa {0:.3e})")]
    UnstableResult(f64),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

/// How the measurement-noise channel of the design model is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementNoise {
    /// Use D_d as given; D_d D_d^T must be nonsingular.
    AsModeled,
    /// Append unit-intensity sensor noise so that the completed D_d D_d^T = I.
    #[default]
    UnitCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStrategy {
    /// Joint optimization of the weighted objective.
    #[default]
    PathFollowing,
    /// Bisection on gamma2^2 by feasibility problems, then minimize gamma1^2.
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub lmi_margin: f64,
    /// Required closed-loop decay rate sigma (0 disables the constraint).
    pub decay_rate: f64,
    pub measurement_noise: MeasurementNoise,
    /// Upper bound P <= p_bound I keeping the barrier problem bounded.
    pub p_bound: f64,
    /// Box bound on the remaining decision variables.
    pub variable_bound: f64,
    /// Fall back to a robustness-only certificate when the fault constraint is infeasible.
    pub sensitivity_fallback: bool,
    pub strategy: SdpStrategy,
    pub gap_tol: f64,
    pub max_newton_steps: usize,
    /// Verification grid in rad/s; empty means the default grid.
    pub grid: Vec<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            lmi_margin: 1e-6,
            decay_rate: 0.0,
            measurement_noise: MeasurementNoise::UnitCompletion,
            p_bound: 1e4,
            variable_bound: 1e6,
            sensitivity_fallback: true,
            strategy: SdpStrategy::PathFollowing,
            gap_tol: 1e-9,
            max_newton_steps: 5000,
            grid: Vec::new(),
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(SynthesisError::InvalidOptions(s.into()));
        if !(self.beta1 > 0.0 && self.beta2 > 0.0) {
            return bad("beta1 and beta2 must be positive");
        }
        if !(self.lmi_margin > 0.0) {
            return bad("lmi_margin must be positive");
        }
        if !(self.decay_rate >= 0.0) {
            return bad("decay_rate must be nonnegative");
        }
        if !(self.p_bound > 0.0 && self.variable_bound > 0.0) {
            return bad("bounds must be positive");
        }
        Ok(())
    }

    pub fn frequency_grid(&self) -> Vec<f64> {
        if self.grid.is_empty() {
            default_frequency_grid()
        } else {
            self.grid.clone()
        }
    }

    fn sdp(&self) -> SdpOptions {
        SdpOptions { gap_tol: self.gap_tol, max_newton_total: self.max_newton_steps, ..SdpOptions::default() }
    }
}

fn sym_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Relative model with the measurement-noise channel used for design.
pub fn design_model(rel: &RelativeModel, noise: MeasurementNoise) -> Result<RelativeModel> {
    match noise {
        MeasurementNoise::AsModeled => Ok(rel.clone()),
        MeasurementNoise::UnitCompletion => {
            let xi = rel.c.nrows();
            let r = &rel.dd * rel.dd.transpose();
            let top = r.clone().symmetric_eigen().eigenvalues.iter().copied().fold(0.0, f64::max);
            if top > 1.0 + 1e-12 {
                return Err(SynthesisError::NoiseCompletion(top));
            }
            let comp = sym_sqrt_psd(&(DMatrix::identity(xi, xi) - r));
            let q = rel.dd.ncols();
            let mut out = rel.clone();
            out.dd = DMatrix::zeros(xi, q + xi);
            out.dd.view_mut((0, 0), (xi, q)).copy_from(&rel.dd);
            out.dd.view_mut((0, q), (xi, xi)).copy_from(&comp);
            out.bd = DMatrix::zeros(rel.a.nrows(), q + xi);
            out.bd.view_mut((0, 0), rel.bd.shape()).copy_from(&rel.bd);
            Ok(out)
        }
    }
}

/// Riccati solution and nominal gain for a (design) relative model.
#[derive(Debug, Clone)]
pub struct NominalGain {
    pub y: DMatrix<f64>,
    pub l_nominal: DMatrix<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl NominalGain {
    /// trace(C Y C^T), the optimal squared H2 norm.
    pub fn optimal_h2_squared(&self, design: &RelativeModel) -> f64 {
        (&design.c * &self.y * design.c.transpose()).trace()
    }
}

/// Nominal gain of a design model (see [`design_model`]).
pub fn nominal_gain(design: &RelativeModel) -> Result<NominalGain> {
    let s = solve_filter_care(&design.a, &design.c, &design.bd, &design.dd)?;
    Ok(NominalGain { y: s.y, l_nominal: s.l_nominal, residual_norm: s.residual_norm, iterations: s.iterations })
}

/// Where the decision variables live in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VariableLayout {
    pub mu: usize,
    pub xi: usize,
    pub p_offset: usize,
    pub n_offset: usize,
    pub q_offset: usize,
    pub alpha1: usize,
    pub alpha2: Option<usize>,
    pub n_vars: usize,
}

impl VariableLayout {
    fn new(mu: usize, xi: usize, with_alpha2: bool) -> Self {
        let p_offset = 0;
        let n_offset = mu * (mu + 1) / 2;
        let q_offset = n_offset + mu * xi;
        let alpha1 = q_offset + xi * (xi + 1) / 2;
        let alpha2 = with_alpha2.then_some(alpha1 + 1);
        let n_vars = alpha1 + 1 + usize::from(with_alpha2);
        Self { mu, xi, p_offset, n_offset, q_offset, alpha1, alpha2, n_vars }
    }

    pub fn p(&self) -> Affine {
        Affine::symmetric(self.p_offset, self.mu)
    }
    pub fn n(&self) -> Affine {
        Affine::full(self.n_offset, self.mu, self.xi)
    }
    pub fn q(&self) -> Affine {
        Affine::symmetric(self.q_offset, self.xi)
    }

    pub fn pack(&self, cert: &Certificate) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_vars);
        let mut k = self.p_offset;
        for i in 0..self.mu {
            for j in i..self.mu {
                x[k] = cert.p[(i, j)];
                k += 1;
            }
        }
        for i in 0..self.mu {
            for j in 0..self.xi {
                x[self.n_offset + i * self.xi + j] = cert.n[(i, j)];
            }
        }
        let mut k = self.q_offset;
        for i in 0..self.xi {
            for j in i..self.xi {
                x[k] = cert.q[(i, j)];
                k += 1;
            }
        }
        x[self.alpha1] = cert.alpha1;
        if let Some(a2) = self.alpha2 {
            x[a2] = cert.alpha2;
        }
        x
    }

    pub fn unpack(&self, x: &DVector<f64>, fixed_alpha2: f64) -> Certificate {
        Certificate {
            p: self.p().eval(x),
            n: self.n().eval(x),
            q: self.q().eval(x),
            alpha1: x[self.alpha1],
            alpha2: self.alpha2.map(|k| x[k]).unwrap_or(fixed_alpha2),
        }
    }
}

/// Decision matrices of the design program.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Treatment of gamma2^2 in the program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha2 {
    /// Decision variable, objective beta2 alpha2 - beta1 alpha1.
    Variable,
    /// Fixed value; the fault constraint is a feasibility condition.
    Fixed(f64),
    /// No fault constraint; minimize alpha1 only.
    Absent,
}

/// Semidefinite program over (P, N, Q, alpha1, alpha2).
#[derive(Debug, Clone)]
pub struct LmiProgram {
    pub layout: VariableLayout,
    pub problem: SdpProblem,
    pub alpha2: Alpha2,
}

/// Names of the blocks that make up the design conditions.
pub mod constraint {
    pub const COUPLING: &str = "coupling";
    pub const H2_BUDGET: &str = "h2_budget";
    pub const STABILITY: &str = "stability";
    pub const DECAY: &str = "decay";
    pub const SENSITIVITY: &str = "fault_sensitivity";
    pub const ALPHA2_MIN: &str = "alpha2_min";
    pub const P_LOWER: &str = "p_lower";
    pub const P_UPPER: &str = "p_upper";
}

fn margin_for(base: f64, data: &DMatrix<f64>) -> f64 {
    base * data.norm().max(1.0)
}

fn cholesky_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.unpack())
}

/// Builds the design program. Constraints, with A = Acal - L_nom C, Bf = Bf_cal - L_nom Df,
/// F = P A - N C + A^T P - C^T N^T and R = Dd Dd^T = G G^T:
///
/// * coupling: [Q, G^T N^T; N G, P] >= 0
/// * h2_budget: alpha1 - trace(Q) - trace(C Y C^T) >= 0
/// * stability: -(F + C^T C) >= eps I
/// * decay: -(F + 2 sigma P) >= eps I (only when sigma > 0)
/// * fault_sensitivity: [Df^T Df - alpha2 I, M^T; M, C^T C - F] >= eps I, M = C^T Df - (P Bf - N Df)
/// * alpha2 >= eps, eps I <= P <= p_bound I, and box bounds on the remaining entries.
pub fn build_lmi_program(
    design: &RelativeModel,
    nominal: &NominalGain,
    opts: &SynthesisOptions,
    alpha2: Alpha2,
) -> LmiProgram {
    let (mu, xi) = (design.a.nrows(), design.c.nrows());
    let layout = VariableLayout::new(mu, xi, matches!(alpha2, Alpha2::Variable));
    let (c, df) = (&design.c, &design.df);
    let a_nom = &design.a - &nominal.l_nominal * c;
    let bf_nom = &design.bf - &nominal.l_nominal * df;
    let r = &design.dd * design.dd.transpose();
    let g = cholesky_factor(&((&r + r.transpose()) * 0.5)).unwrap_or_else(|| DMatrix::identity(xi, xi));

    let p = layout.p();
    let n = layout.n();
    let q = layout.q();
    let ctc = c.transpose() * c;
    let f = p.rmul(&a_nom).sub(&n.rmul(c));
    let f = f.add(&f.transpose());

    let mut blocks = Vec::new();

    let ng = n.rmul(&g);
    let gtnt = ng.transpose();
    blocks.push(Affine::blocks(&[vec![&q, &gtnt], vec![&ng, &p]]).into_block(constraint::COUPLING, true));

    let cyc = (c * &nominal.y * c.transpose()).trace();
    let budget = Affine::scalar_identity(layout.alpha1, 1).sub(&q.trace()).add_constant(&DMatrix::from_element(1, 1, -cyc));
    blocks.push(budget.into_block(constraint::H2_BUDGET, true));

    let eps = margin_for(opts.lmi_margin, &ctc);
    let stab = f.add_constant(&ctc).scale(-1.0).add_constant(&(DMatrix::identity(mu, mu) * -eps));
    blocks.push(stab.into_block(constraint::STABILITY, true));

    if opts.decay_rate > 0.0 {
        let eps = opts.lmi_margin;
        let decay = f.add(&p.scale(2.0 * opts.decay_rate)).scale(-1.0).add_constant(&(DMatrix::identity(mu, mu) * -eps));
        blocks.push(decay.into_block(constraint::DECAY, true));
    }

    if !matches!(alpha2, Alpha2::Absent) {
        let nf = df.ncols();
        let dtd = df.transpose() * df;
        let top = match alpha2 {
            Alpha2::Variable => Affine::constant(dtd.clone()).sub(&Affine::scalar_identity(layout.alpha2.unwrap(), nf)),
            Alpha2::Fixed(v) => Affine::constant(&dtd - DMatrix::identity(nf, nf) * v),
            Alpha2::Absent => unreachable!(),
        };
        let m = p.rmul(&bf_nom).sub(&n.rmul(df)).scale(-1.0).add_constant(&(c.transpose() * df));
        let mt = m.transpose();
        let corner = f.scale(-1.0).add_constant(&ctc);
        let block = Affine::blocks(&[vec![&top, &mt], vec![&m, &corner]]);
        let eps = margin_for(opts.lmi_margin, &ctc);
        let block = block.add_constant(&(DMatrix::identity(nf + mu, nf + mu) * -eps));
        blocks.push(block.into_block(constraint::SENSITIVITY, true));
        if let Alpha2::Variable = alpha2 {
            let a2 = Affine::scalar_identity(layout.alpha2.unwrap(), 1).add_constant(&DMatrix::from_element(1, 1, -opts.lmi_margin));
            blocks.push(a2.into_block(constraint::ALPHA2_MIN, true));
        }
    }

    let eye = DMatrix::<f64>::identity(mu, mu);
    blocks.push(p.add_constant(&(&eye * -opts.lmi_margin)).into_block(constraint::P_LOWER, true));
    blocks.push(p.scale(-1.0).add_constant(&(&eye * opts.p_bound)).into_block(constraint::P_UPPER, true));

    for k in layout.n_offset..layout.n_vars {
        for (sign, tag) in [(1.0, "box_lo"), (-1.0, "box_hi")] {
            let mut e = Affine::constant(DMatrix::from_element(1, 1, opts.variable_bound));
            e.terms.insert(k, DMatrix::from_element(1, 1, sign));
            blocks.push(e.into_block(tag, false));
        }
    }

    let mut objective = DVector::zeros(layout.n_vars);
    objective[layout.alpha1] = opts.beta1;
    if let Some(k) = layout.alpha2 {
        objective[k] = -opts.beta2;
    }
    LmiProgram { layout, problem: SdpProblem { n_vars: layout.n_vars, objective, blocks }, alpha2 }
}

impl LmiProgram {
    /// Interior starting guess: P = I, N = 0, Q = 0, alpha1 above the budget floor.
    fn start(&self, design: &RelativeModel, nominal: &NominalGain) -> DVector<f64> {
        let l = &self.layout;
        let cert = Certificate {
            p: DMatrix::identity(l.mu, l.mu),
            n: DMatrix::zeros(l.mu, l.xi),
            q: DMatrix::zeros(l.xi, l.xi),
            alpha1: nominal.optimal_h2_squared(design) + 1.0,
            alpha2: 2.0 * 1e-6,
        };
        l.pack(&cert)
    }
}

/// Minimum eigenvalue of one named constraint at a certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub min_eigenvalue: f64,
}

/// Evaluates every design constraint (fault constraint included) at `cert`.
pub fn certificate_margins(
    design: &RelativeModel,
    nominal: &NominalGain,
    opts: &SynthesisOptions,
    cert: &Certificate,
) -> Vec<ConstraintMargin> {
    let prog = build_lmi_program(design, nominal, opts, Alpha2::Variable);
    let x = prog.layout.pack(cert);
    prog.problem
        .blocks
        .iter()
        .filter(|b| b.shiftable)
        .map(|b| ConstraintMargin { name: b.name.clone(), min_eigenvalue: b.min_eigenvalue(&x) })
        .collect()
}

/// A-posteriori check of a gain on the (design) relative model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// H2 norm of the strictly proper part of T_rd.
    pub h2_of_trd: f64,
    /// Frobenius norm of the direct feedthrough of T_rd, reported separately.
    pub trd_feedthrough_norm: f64,
    pub hminus_of_trf: f64,
    pub max_closed_loop_real_part: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lmi_residuals: Vec<ConstraintMargin>,
    pub pass: bool,
}

pub fn verify_synthesis(design: &RelativeModel, l: &DMatrix<f64>, gamma1: f64, gamma2: f64, grid: &[f64]) -> VerificationReport {
    let acl = &design.a - l * &design.c;
    let abscissa = spectral_abscissa(&acl);
    let feed = design.dd.norm();
    let mut report = VerificationReport {
        h2_of_trd: f64::INFINITY,
        trd_feedthrough_norm: feed,
        hminus_of_trf: 0.0,
        max_closed_loop_real_part: abscissa,
        gamma1,
        gamma2,
        lmi_residuals: Vec::new(),
        pass: false,
    };
    if !(abscissa < 0.0) {
        return report;
    }
    let bd = &design.bd - l * &design.dd;
    let h2 = StateSpace::strictly_proper(acl.clone(), bd, design.c.clone()).and_then(|s| h2_norm(&s));
    let bf = &design.bf - l * &design.df;
    let hm = StateSpace::new(acl, bf, design.c.clone(), design.df.clone()).and_then(|s| h_minus_index(&s, grid));
    if let (Ok(h2), Ok(hm)) = (h2, hm) {
        report.h2_of_trd = h2;
        report.hminus_of_trf = hm;
        report.pass = h2 <= gamma1 * (1.0 + 1e-6) && hm >= gamma2 * (1.0 - 1e-6);
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    /// H2 and H- conditions both certified.
    Full,
    /// Fault constraint infeasible; only the H2 and stability conditions hold, gamma2 = 0.
    RobustnessOnly,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub agent_id: usize,
    pub design: RelativeModel,
    pub y: DMatrix<f64>,
    pub l_nominal: DMatrix<f64>,
    pub certificate: Certificate,
    pub delta_l: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mode: CertificateMode,
    pub strategy: SdpStrategy,
    pub newton_steps: usize,
    pub achieved_h2: f64,
    pub achieved_hminus: f64,
    pub verification: VerificationReport,
    /// Why the full certificate was not available, when `mode` is RobustnessOnly.
    pub note: Option<String>,
}

impl SynthesisResult {
    pub fn passed(&self) -> bool {
        self.verification.pass
    }
}

fn has_fault_path(design: &RelativeModel) -> bool {
    design.bf.iter().chain(design.df.iter()).any(|v| *v != 0.0)
}

struct Solved {
    cert: Certificate,
    steps: usize,
}

fn run_program(prog: &LmiProgram, design: &RelativeModel, nominal: &NominalGain, opts: &SynthesisOptions) -> Result<Solved> {
    let fixed = match prog.alpha2 {
        Alpha2::Fixed(v) => v,
        _ => 0.0,
    };
    let start = prog.start(design, nominal);
    match sdp::solve(&prog.problem, &start, &opts.sdp()) {
        Ok(sol) => Ok(Solved { cert: prog.layout.unpack(&sol.x, fixed), steps: sol.newton_steps }),
        Err(SdpError::Infeasible { shift }) => Err(SynthesisError::Infeasible(format!("phase-I optimum {shift:.3e}"))),
        Err(SdpError::Stalled(s)) => Err(SynthesisError::SolverStalled(s)),
    }
}

fn feasible_at(alpha2: f64, design: &RelativeModel, nominal: &NominalGain, opts: &SynthesisOptions) -> Result<bool> {
    let prog = build_lmi_program(design, nominal, opts, Alpha2::Fixed(alpha2));
    let start = prog.start(design, nominal);
    // A probe that stalls is treated as infeasible, so `lo` stays certified.
    match sdp::find_strictly_feasible(&prog.problem, &start, &opts.sdp()) {
        Ok(_) => Ok(true),
        Err(_) => Ok(false),
    }
}

fn run_bisection(design: &RelativeModel, nominal: &NominalGain, opts: &SynthesisOptions) -> Result<Solved> {
    let dtd = design.df.transpose() * &design.df;
    let hi0 = dtd.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (opts.lmi_margin, hi0);
    if !(hi > lo) || !feasible_at(lo, design, nominal, opts)? {
        return Err(SynthesisError::Infeasible("fault constraint infeasible at the minimum gamma2".into()));
    }
    for _ in 0..40 {
        if hi - lo <= 1e-8 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible_at(mid, design, nominal, opts)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let prog = build_lmi_program(design, nominal, opts, Alpha2::Fixed(lo));
    run_program(&prog, design, nominal, opts)
}

/// Computes and verifies the gain for one neighborhood.
pub fn synthesize_observer(rel: &RelativeModel, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    opts.validate()?;
    let design = design_model(rel, opts.measurement_noise)?;
    let nominal = nominal_gain(&design)?;

    let full = match opts.strategy {
        SdpStrategy::PathFollowing => {
            let prog = build_lmi_program(&design, &nominal, opts, Alpha2::Variable);
            match run_program(&prog, &design, &nominal, opts) {
                Err(SynthesisError::SolverStalled(_)) => run_bisection(&design, &nominal, opts).map(|s| (s, SdpStrategy::Bisection)),
                other => other.map(|s| (s, SdpStrategy::PathFollowing)),
            }
        }
        SdpStrategy::Bisection => run_bisection(&design, &nominal, opts).map(|s| (s, SdpStrategy::Bisection)),
    };

    let (solved, strategy, mode, note) = match full {
        Ok((s, strat)) => (s, strat, CertificateMode::Full, None),
        Err(SynthesisError::Infeasible(why)) if opts.sensitivity_fallback && has_fault_path(&design) => {
            let prog = build_lmi_program(&design, &nominal, opts, Alpha2::Absent);
            let s = run_program(&prog, &design, &nominal, opts)?;
            (s, opts.strategy, CertificateMode::RobustnessOnly, Some(format!("fault sensitivity not certified: {why}")))
        }
        Err(e) => return Err(e),
    };

    let cert = solved.cert;
    let delta_l = match cert.p.clone().cholesky() {
        Some(ch) => ch.solve(&cert.n),
        None => return Err(SynthesisError::SolverStalled("certificate P is not positive definite".into())),
    };
    let l = &nominal.l_nominal + &delta_l;
    let gamma1 = cert.alpha1.max(0.0).sqrt();
    let gamma2 = match mode {
        CertificateMode::Full => cert.alpha2.max(0.0).sqrt(),
        CertificateMode::RobustnessOnly => 0.0,
    };
    let grid = opts.frequency_grid();
    let mut verification = verify_synthesis(&design, &l, gamma1, gamma2, &grid);
    if !(verification.max_closed_loop_real_part < 0.0) {
        return Err(SynthesisError::UnstableResult(verification.max_closed_loop_real_part));
    }
    verification.lmi_residuals = certificate_margins(&design, &nominal, opts, &Certificate { alpha2: gamma2 * gamma2, ..cert.clone() });

    Ok(SynthesisResult {
        agent_id: rel.agent_id,
        y: nominal.y,
        l_nominal: nominal.l_nominal,
        certificate: cert,
        delta_l,
        l,
        gamma1,
        gamma2,
        mode,
        strategy,
        newton_steps: solved.steps,
        achieved_h2: verification.h2_of_trd,
        achieved_hminus: verification.hminus_of_trf,
        verification,
        note,
        design,
    })
}
