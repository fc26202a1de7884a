//! Dense kernels: Lyapunov and filter Riccati solvers, H2 norm, H- index and
//! stability tests.
//!
//! Everything here is a pure function on `nalgebra` dense matrices. Problem
//! sizes in this crate are small (tens of states), so the routines favour
//! clarity and robustness over asymptotic efficiency.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },
    #[error("system has nonzero feedthrough; H2 norm is unbounded")]
    NotStrictlyProper,
    #[error("pair (C, A) is not detectable (mode at {re:.4} {im:+.4}j)")]
    NotDetectable { re: f64, im: f64 },
    #[error("noise covariance D D^T is singular (min eigenvalue {min_eig:.3e})")]
    SingularNoise { min_eig: f64 },
    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(&'static str),
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// State-space realization G(s) = C (sI - A)^-1 B + D.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MatrixError::DimensionMismatch(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(MatrixError::DimensionMismatch(format!(
                "B has {} rows, C has {} columns, A has order {}",
                b.nrows(),
                c.ncols(),
                n
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(MatrixError::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Realization with zero feedthrough.
    pub fn strictly_proper(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Frequency response G(jw).
    pub fn response(&self, omega: f64) -> Result<DMatrix<Complex<f64>>> {
        let n = self.order();
        let mut m = self.a.map(|v| Complex::new(-v, 0.0));
        for k in 0..n {
            m[(k, k)] += Complex::new(0.0, omega);
        }
        let b = self.b.map(|v| Complex::new(v, 0.0));
        let x = m.lu().solve(&b).ok_or(MatrixError::Singular("frequency response"))?;
        let c = self.c.map(|v| Complex::new(v, 0.0));
        Ok(c * x + self.d.map(|v| Complex::new(v, 0.0)))
    }
}

/// Stabilizing solution of the filter Riccati equation and its gain.
#[derive(Debug, Clone)]
pub struct CareSolution {
    pub y: DMatrix<f64>,
    pub l_nominal: DMatrix<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Eigenvalues of a real square matrix, computed after Parlett-Reinsch balancing.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut m = a.clone();
    nalgebra::linalg::balancing::balance_parlett_reinsch(&mut m);
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// True iff every eigenvalue of `a` has real part below `-margin`.
pub fn is_hurwitz(a: &DMatrix<f64>, margin: f64) -> bool {
    assert!(a.is_square(), "is_hurwitz needs a square matrix");
    spectral_abscissa(a) < -margin
}

fn require_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    let abscissa = spectral_abscissa(a);
    if abscissa < 0.0 {
        Ok(())
    } else {
        Err(MatrixError::NotHurwitz { abscissa })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves T X + X T^T = C for quasi upper triangular T (real Schur form).
fn solve_quasi_triangular(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    // Diagonal block boundaries: a 2x2 block starts wherever the subdiagonal is nonzero.
    let mut starts = Vec::new();
    let mut k = 0;
    while k < n {
        starts.push(k);
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            k += 2;
        } else {
            k += 1;
        }
    }
    let size = |b: usize| if b + 1 < starts.len() { starts[b + 1] - starts[b] } else { n - starts[b] };

    let mut x = DMatrix::<f64>::zeros(n, n);
    let nb = starts.len();
    for bk in (0..nb).rev() {
        let (k0, sk) = (starts[bk], size(bk));
        for bl in (0..nb).rev() {
            let (l0, sl) = (starts[bl], size(bl));
            let mut rhs = c.view((k0, l0), (sk, sl)).clone_owned();
            let kend = k0 + sk;
            let lend = l0 + sl;
            if kend < n {
                rhs -= t.view((k0, kend), (sk, n - kend)) * x.view((kend, l0), (n - kend, sl));
            }
            if lend < n {
                rhs -= x.view((k0, lend), (sk, n - lend)) * t.view((l0, lend), (sl, n - lend)).transpose();
            }
            let tkk = t.view((k0, k0), (sk, sk)).clone_owned();
            let tll = t.view((l0, l0), (sl, sl)).clone_owned();
            // (I (x) Tkk + Tll (x) I) vec(X) = vec(rhs), at most 4x4.
            let sys = DMatrix::<f64>::identity(sl, sl).kronecker(&tkk) + tll.kronecker(&DMatrix::<f64>::identity(sk, sk));
            let v = DVector::from_column_slice(rhs.as_slice());
            let sol = sys.lu().solve(&v).ok_or(MatrixError::Singular("Lyapunov block"))?;
            x.view_mut((k0, l0), (sk, sl)).copy_from_slice(sol.as_slice());
        }
    }
    Ok(x)
}

/// Solves A P + P A^T + Q = 0 by the Bartels-Stewart method.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(MatrixError::DimensionMismatch(format!(
            "A is {}x{}, Q is {}x{}",
            n,
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    require_hurwitz(a)?;
    let (u, t) = a.clone().schur().unpack();
    let c = -(u.transpose() * q * &u);
    let x = solve_quasi_triangular(&t, &c)?;
    let mut p = &u * x * u.transpose();
    symmetrize(&mut p);
    Ok(p)
}

/// Observability Gramian W_o: A^T W_o + W_o A + C^T C = 0.
pub fn observability_gramian(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_lyapunov(&a.transpose(), &(c.transpose() * c))
}

/// Controllability Gramian W_c: A W_c + W_c A^T + B B^T = 0.
pub fn controllability_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_lyapunov(a, &(b * b.transpose()))
}

/// H2 norm sqrt(trace(B^T W_o B)) of a strictly proper stable system.
pub fn h2_norm(sys: &StateSpace) -> Result<f64> {
    if sys.d.iter().any(|&v| v != 0.0) {
        return Err(MatrixError::NotStrictlyProper);
    }
    let wo = observability_gramian(&sys.a, &sys.c)?;
    Ok((sys.b.transpose() * wo * &sys.b).trace().max(0.0).sqrt())
}

/// Both Gramian trace formulas, (trace(B^T W_o B), trace(C W_c C^T)).
pub fn h2_norm_squared_both(sys: &StateSpace) -> Result<(f64, f64)> {
    if sys.d.iter().any(|&v| v != 0.0) {
        return Err(MatrixError::NotStrictlyProper);
    }
    let wo = observability_gramian(&sys.a, &sys.c)?;
    let wc = controllability_gramian(&sys.a, &sys.b)?;
    Ok(((sys.b.transpose() * wo * &sys.b).trace(), (&sys.c * wc * sys.c.transpose()).trace()))
}

/// `count` logarithmically spaced points between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)).collect()
}

/// Verification grid: 1000 points over [1e-3, 1e3] rad/s.
pub fn default_frequency_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 1000)
}

/// Smallest singular value of G(jw) minimized over the grid.
pub fn h_minus_index(sys: &StateSpace, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(MatrixError::InvalidGrid("empty"));
    }
    if grid.iter().any(|&w| !(w > 0.0)) {
        return Err(MatrixError::InvalidGrid("frequencies must be positive"));
    }
    if grid.windows(2).any(|p| p[1] < p[0]) {
        return Err(MatrixError::InvalidGrid("frequencies must be sorted"));
    }
    require_hurwitz(&sys.a)?;
    let mut best = f64::INFINITY;
    for &w in grid {
        let g = sys.response(w)?;
        let smin = g.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
        best = best.min(smin);
    }
    Ok(best)
}

fn smallest_singular_value_complex(m: &DMatrix<Complex<f64>>) -> f64 {
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// PBH detectability test for (C, A). Returns the first offending eigenvalue.
pub fn detectability_violation(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<Complex<f64>> {
    let n = a.nrows();
    let scale = 1.0 + a.norm() + c.norm();
    for lambda in eigenvalues(a) {
        if lambda.re < -1e-9 * scale {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(a[(i, j)], 0.0) - if i == j { lambda } else { Complex::new(0.0, 0.0) };
            }
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                m[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        if smallest_singular_value_complex(&m) < 1e-9 * scale {
            return Some(lambda);
        }
    }
    None
}

pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    detectability_violation(a, c).is_none()
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(1e-300);
    let inv = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// A gain K with F - K C Hurwitz, from Bass's shifted Lyapunov construction.
fn shifted_stabilizing_gain(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let eigs = f.complex_eigenvalues();
    if eigs.iter().all(|z| z.re < 0.0) {
        return Ok(DMatrix::zeros(n, c.nrows()));
    }
    // The shift must move every eigenvalue of F + bI into the open right half plane.
    // Small shifts keep Z well conditioned, so larger ones are only tried on failure.
    let min_shift = eigs.iter().map(|z| -z.re).fold(0.0, f64::max);
    for extra in [0.5, 1.0, 2.0, 4.0] {
        let beta = min_shift + extra;
        // (F + bI)^T Z + Z (F + bI) = 2 C^T C, then K = Z^-1 C^T.
        let shifted = -(f.transpose() + DMatrix::identity(n, n) * beta);
        let z = solve_lyapunov(&shifted, &((c.transpose() * c) * 2.0))?;
        let k = z.clone().lu().solve(&c.transpose()).unwrap_or_else(|| psd_pinv(&z) * c.transpose());
        if k.iter().all(|v| v.is_finite()) && spectral_abscissa(&(f - &k * c)) < 0.0 {
            return Ok(k);
        }
    }
    Err(MatrixError::NoStabilizingSolution("no stabilizing initial gain".into()))
}

/// Frobenius norm of the pre-whitened filter Riccati residual at `y`.
pub fn filter_care_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    dd: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<f64> {
    let parts = CareParts::new(a, c, bd, dd)?;
    Ok(parts.residual(y))
}

struct CareParts {
    at: DMatrix<f64>,
    c: DMatrix<f64>,
    rinv: DMatrix<f64>,
    r: DMatrix<f64>,
    w: DMatrix<f64>,
    s_rinv: DMatrix<f64>,
}

impl CareParts {
    fn new(a: &DMatrix<f64>, c: &DMatrix<f64>, bd: &DMatrix<f64>, dd: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || c.ncols() != n || bd.nrows() != n || dd.nrows() != c.nrows() || dd.ncols() != bd.ncols() {
            return Err(MatrixError::DimensionMismatch(format!(
                "A {}x{}, C {}x{}, Bd {}x{}, Dd {}x{}",
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols(),
                bd.nrows(),
                bd.ncols(),
                dd.nrows(),
                dd.ncols()
            )));
        }
        let r = dd * dd.transpose();
        let scale = r.norm().max(1.0);
        let min_eig = r.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_eig > 1e-12 * scale) {
            return Err(MatrixError::SingularNoise { min_eig });
        }
        let mut rinv = r.clone().cholesky().ok_or(MatrixError::SingularNoise { min_eig })?.inverse();
        symmetrize(&mut rinv);
        let s = bd * dd.transpose();
        let s_rinv = &s * &rinv;
        let at = a - &s_rinv * c;
        let q = bd.ncols();
        let mut w = bd * (DMatrix::identity(q, q) - dd.transpose() * &rinv * dd) * bd.transpose();
        symmetrize(&mut w);
        Ok(Self { at, c: c.clone(), rinv, r, w, s_rinv })
    }

    fn residual(&self, y: &DMatrix<f64>) -> f64 {
        let ycr = y * self.c.transpose() * &self.rinv;
        (&self.at * y + y * self.at.transpose() - &ycr * &self.c * y + &self.w).norm()
    }
}

/// Filter CARE with correlated, pre-whitened noise:
/// (A - S R^-1 C) Y + Y (.)^T - Y C^T R^-1 C Y + Bd (I - Dd^T R^-1 Dd) Bd^T = 0,
/// where S = Bd Dd^T and R = Dd Dd^T. The gain is L = (Y C^T + S) R^-1.
pub fn solve_filter_care(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    dd: &DMatrix<f64>,
) -> Result<CareSolution> {
    let parts = CareParts::new(a, c, bd, dd)?;
    if let Some(lambda) = detectability_violation(a, c) {
        return Err(MatrixError::NotDetectable { re: lambda.re, im: lambda.im });
    }
    let n = a.nrows();
    let scale = 1.0 + parts.w.norm() + a.norm();

    // Newton-Kleinman on the whitened problem: K is the innovation gain Y C^T R^-1.
    let mut k = shifted_stabilizing_gain(&parts.at, &c)?;
    let mut y = DMatrix::<f64>::zeros(n, n);
    let mut prev_step = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it + 1;
        let acl = &parts.at - &k * c;
        let q = &k * &parts.r * k.transpose() + &parts.w;
        let y_next = solve_lyapunov(&acl, &q).map_err(|e| match e {
            MatrixError::NotHurwitz { .. } => MatrixError::NoStabilizingSolution("Newton iterate lost stability".into()),
            other => other,
        })?;
        let step = (&y_next - &y).norm();
        y = y_next;
        symmetrize(&mut y);
        k = &y * c.transpose() * &parts.rinv;
        residual = parts.residual(&y);
        // Rounding sets a floor proportional to |Y|; once there the steps stop contracting.
        let accepted = residual < 1e-8 * (scale + y.norm());
        if residual < 1e-13 * (scale + y.norm()) || step < 1e-15 * (1.0 + y.norm()) || (accepted && step >= prev_step) {
            break;
        }
        prev_step = step;
    }
    if !(residual < 1e-8 * (scale + y.norm())) {
        return Err(MatrixError::NoStabilizingSolution(format!("Newton-Kleinman stalled at residual {residual:.3e}")));
    }
    let l_nominal = &k + &parts.s_rinv;
    if spectral_abscissa(&(a - &l_nominal * c)) >= 0.0 {
        return Err(MatrixError::NoStabilizingSolution("closed loop not Hurwitz".into()));
    }
    Ok(CareSolution { y, l_nominal, residual_norm: residual, iterations })
}
