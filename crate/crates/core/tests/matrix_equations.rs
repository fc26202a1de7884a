mod common;

use common::*;
use distfdi::matrix_equations::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn lyap_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + q).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lyapunov_residual_small(seed in any::<u64>(), n in 1usize..=10) {
        let mut r = rng(seed);
        let a = random_hurwitz(&mut r, n, 0.1);
        let b = random_matrix(&mut r, n, n, 1.0);
        let q = &b * b.transpose();
        let x = solve_lyapunov(&a, &q).unwrap();
        prop_assert!(lyap_residual(&a, &x, &q) < 1e-10 * (1.0 + q.norm()));
        prop_assert!((&x - x.transpose()).norm() == 0.0);
    }

    #[test]
    fn lyapunov_matches_kronecker_oracle(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let a = random_hurwitz(&mut r, n, 0.2);
        let q0 = random_matrix(&mut r, n, n, 1.0);
        let q = &q0 + q0.transpose();
        let x = solve_lyapunov(&a, &q).unwrap();
        let oracle = kron_lyapunov(&a, &q);
        prop_assert!((&x - &oracle).norm() < 1e-9 * (1.0 + oracle.norm()));
    }

    #[test]
    fn h2_gramian_traces_agree(seed in any::<u64>(), n in 1usize..=8, m in 1usize..=3, p in 1usize..=3) {
        let mut r = rng(seed);
        let a = random_hurwitz(&mut r, n, 0.1);
        let b = random_matrix(&mut r, n, m, 1.0);
        let c = random_matrix(&mut r, p, n, 1.0);
        let (o, k) = h2_norm_squared_both(&StateSpace::strictly_proper(a, b, c).unwrap()).unwrap();
        prop_assert!((o - k).abs() < 1e-9 * (1.0 + o.abs()));
    }

    #[test]
    fn h_minus_decreases_on_finer_grids(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let a = random_hurwitz(&mut r, n, 0.1);
        let b = random_matrix(&mut r, n, 2, 1.0);
        let c = random_matrix(&mut r, 3, n, 1.0);
        let d = random_matrix(&mut r, 3, 2, 1.0);
        let sys = StateSpace::new(a, b, c, d).unwrap();
        let coarse = log_grid(1e-2, 1e2, 21);
        let fine = log_grid(1e-2, 1e2, 41);
        prop_assert!(h_minus_index(&sys, &fine).unwrap() <= h_minus_index(&sys, &coarse).unwrap());
    }

    #[test]
    fn care_solution_properties(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, n, n, 1.0);
        let c = random_matrix(&mut r, p, n, 1.0);
        let q = p + 1;
        let bd = random_matrix(&mut r, n, q, 1.0);
        let mut dd = random_matrix(&mut r, p, q, 0.3);
        for k in 0..p {
            dd[(k, k)] += 1.0;
        }
        let s = solve_filter_care(&a, &c, &bd, &dd).unwrap();
        // Unwhitened form: A Y + Y A^T - (Y C^T + S) R^-1 (C Y + S^T) + Bd Bd^T = 0.
        let rr = &dd * dd.transpose();
        let sc = &bd * dd.transpose();
        let rinv = rr.clone().try_inverse().unwrap();
        let g = &s.y * c.transpose() + &sc;
        let res = &a * &s.y + &s.y * a.transpose() - &g * &rinv * g.transpose() + &bd * bd.transpose();
        prop_assert!(res.norm() < 1e-8 * (1.0 + s.y.norm()), "residual {}", res.norm());
        prop_assert!(s.y.clone().symmetric_eigen().eigenvalues.min() > -1e-10 * (1.0 + s.y.norm()));
        let l = &g * &rinv;
        prop_assert!((&l - &s.l_nominal).norm() < 1e-9 * (1.0 + l.norm()));
        prop_assert!(max_real_eig(&(&a - &l * &c)) < 0.0);
    }
}

#[test]
fn h2_matches_quadrature_oracle() {
    let mut r = rng(11);
    for _ in 0..20 {
        let n = 1 + (r.clone().next_u32_helper() % 5) as usize;
        let a = random_hurwitz(&mut r, n, 0.3);
        let b = random_matrix(&mut r, n, 2, 1.0);
        let c = random_matrix(&mut r, 2, n, 1.0);
        let exact = h2_norm(&StateSpace::strictly_proper(a.clone(), b.clone(), c.clone()).unwrap()).unwrap().powi(2);
        let quad = h2_squared_quadrature(&a, &b, &c, 20_000);
        assert!((exact - quad).abs() < 1e-3 * exact, "gramian {exact} quadrature {quad}");
    }
}

trait NextU32 {
    fn next_u32_helper(&mut self) -> u32;
}

impl NextU32 for rand_chacha::ChaCha8Rng {
    fn next_u32_helper(&mut self) -> u32 {
        rand::RngCore::next_u32(self)
    }
}

#[test]
fn lyapunov_rejects_unstable() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]);
    assert!(matches!(solve_lyapunov(&a, &DMatrix::identity(2, 2)), Err(MatrixError::NotHurwitz { .. })));
}

#[test]
fn gramians_of_a_scalar_system() {
    // x' = -3x + 2u, y = 5x: Wc = 4/6, Wo = 25/6.
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let wc = controllability_gramian(&m(-3.0), &m(2.0)).unwrap();
    let wo = observability_gramian(&m(-3.0), &m(5.0)).unwrap();
    assert!((wc[(0, 0)] - 4.0 / 6.0).abs() < 1e-15);
    assert!((wo[(0, 0)] - 25.0 / 6.0).abs() < 1e-14);
}

#[test]
fn care_scalar_closed_form() {
    // a = 1, c = 1, bd = [1 0], dd = [0 1]: Y^2 - 2Y - 1 = 0, Y = 1 + sqrt 2.
    let a = DMatrix::from_element(1, 1, 1.0);
    let c = DMatrix::from_element(1, 1, 1.0);
    let bd = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let dd = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let s = solve_filter_care(&a, &c, &bd, &dd).unwrap();
    assert!((s.y[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    assert!((s.l_nominal[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
}

#[test]
fn complex_pair_spectrum() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
    assert!((spectral_abscissa(&a) + 1.0).abs() < 1e-12);
    assert!(is_hurwitz(&a, 0.5));
    assert!(!is_hurwitz(&a, 1.5));
}
