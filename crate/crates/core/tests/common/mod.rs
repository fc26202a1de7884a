#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random Hurwitz matrix: shifting by the top eigenvalue of the symmetric part
/// bounds every eigenvalue's real part by -margin.
pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    let sym = (&m + m.transpose()) * 0.5;
    let top = sym.symmetric_eigen().eigenvalues.max();
    m - DMatrix::identity(n, n) * (top + margin)
}

/// Kronecker-vectorized Lyapunov solve of A X + X A^T + Q = 0.
pub fn kron_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = k.lu().solve(&rhs).expect("singular Kronecker system");
    DMatrix::from_column_slice(n, n, x.as_slice())
}

/// ||G||_H2^2 = (1/pi) int_0^inf ||G(jw)||_F^2 dw, by Simpson's rule after w = tan(theta).
pub fn h2_squared_quadrature(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, intervals: usize) -> f64 {
    let n = a.nrows();
    let ac = a.map(|v| Complex::new(v, 0.0));
    let bc = b.map(|v| Complex::new(v, 0.0));
    let cc = c.map(|v| Complex::new(v, 0.0));
    let cb = (c * b).norm_squared();
    let f = |theta: f64| -> f64 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if theta >= half_pi - 1e-12 {
            return cb;
        }
        let w = theta.tan();
        let mut m = -ac.clone();
        for k in 0..n {
            m[(k, k)] += Complex::new(0.0, w);
        }
        let g = &cc * m.lu().solve(&bc).unwrap();
        g.iter().map(|z| z.norm_sqr()).sum::<f64>() * (1.0 + w * w)
    };
    let h = std::f64::consts::FRAC_PI_2 / intervals as f64;
    let mut s = f(0.0) + f(std::f64::consts::FRAC_PI_2);
    for k in 1..intervals {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / std::f64::consts::PI
}

pub fn max_real_eig(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

use distfdi::cli::{preset, Scenario};
use distfdi::network_model::{build_relative_model, RelativeModel};
use distfdi::synthesis::{design_model, nominal_gain, Certificate, NominalGain, SynthesisOptions};

pub fn preset_scenario(scenario: u8) -> Scenario {
    preset(scenario).expect("preset parses")
}

/// Substituted relative model of every agent, in id order.
pub fn preset_relatives(scn: &Scenario) -> Vec<RelativeModel> {
    scn.agents
        .iter()
        .map(|a| scn.substitution.apply(&build_relative_model(&scn.agents, &scn.topology, a.id).unwrap()))
        .collect()
}

pub fn preset_designs(scn: &Scenario) -> Vec<(RelativeModel, NominalGain)> {
    preset_relatives(scn)
        .iter()
        .map(|rel| {
            let d = design_model(rel, scn.config.synthesis.measurement_noise).unwrap();
            let n = nominal_gain(&d).unwrap();
            (d, n)
        })
        .collect()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}

/// Unshifted design conditions evaluated directly from the certificate matrices.
/// Returns (name, minimum eigenvalue); every entry must be >= 0 for a valid certificate.
pub fn lmi_oracle(design: &RelativeModel, nominal: &NominalGain, opts: &SynthesisOptions, cert: &Certificate) -> Vec<(&'static str, f64)> {
    let (mu, xi) = (design.a.nrows(), design.c.nrows());
    let c = &design.c;
    let df = &design.df;
    let abar = &design.a - &nominal.l_nominal * c;
    let bfbar = &design.bf - &nominal.l_nominal * df;
    let r = &design.dd * design.dd.transpose();
    let g = r.cholesky().unwrap().unpack();
    let (p, n, q) = (&cert.p, &cert.n, &cert.q);
    let ctc = c.transpose() * c;
    let f = p * &abar - n * c + abar.transpose() * p - c.transpose() * n.transpose();

    let mut coupling = DMatrix::zeros(xi + mu, xi + mu);
    coupling.view_mut((0, 0), (xi, xi)).copy_from(q);
    coupling.view_mut((0, xi), (xi, mu)).copy_from(&(g.transpose() * n.transpose()));
    coupling.view_mut((xi, 0), (mu, xi)).copy_from(&(n * &g));
    coupling.view_mut((xi, xi), (mu, mu)).copy_from(p);

    let budget = cert.alpha1 - q.trace() - (c * &nominal.y * c.transpose()).trace();
    let stability = -(&f + &ctc);

    let nf = df.ncols();
    let m = c.transpose() * df - (p * &bfbar - n * df);
    let mut sens = DMatrix::zeros(nf + mu, nf + mu);
    sens.view_mut((0, 0), (nf, nf)).copy_from(&(df.transpose() * df - DMatrix::identity(nf, nf) * cert.alpha2));
    sens.view_mut((0, nf), (nf, mu)).copy_from(&m.transpose());
    sens.view_mut((nf, 0), (mu, nf)).copy_from(&m);
    sens.view_mut((nf, nf), (mu, mu)).copy_from(&(&ctc - &f));

    let mut out = vec![
        ("coupling", min_eig(&coupling)),
        ("h2_budget", budget),
        ("stability", min_eig(&stability)),
        ("fault_sensitivity", min_eig(&sens)),
        ("p_lower", min_eig(p)),
        ("p_upper", min_eig(&(DMatrix::identity(mu, mu) * opts.p_bound - p))),
    ];
    if opts.decay_rate > 0.0 {
        out.push(("decay", min_eig(&(-(&f + p * (2.0 * opts.decay_rate))))));
    }
    out
}
