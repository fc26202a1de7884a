mod common;

use common::*;
use distfdi::network_model::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn scalar_agent(id: usize, a: f64) -> AgentModel {
    AgentModel::new(id, scalar(a), scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(0.0)).unwrap()
}

#[test]
fn preset_neighborhood_dimensions() {
    let scn = preset_scenario(1);
    let rels = preset_relatives(&scn);
    let mu: Vec<usize> = rels.iter().map(|r| r.dims().mu).collect();
    let xi: Vec<usize> = rels.iter().map(|r| r.dims().xi_y).collect();
    assert_eq!(mu, vec![11, 8, 8, 5]);
    assert_eq!(xi, vec![6, 4, 4, 2]);
    for (rel, agent) in rels.iter().zip(&scn.agents) {
        // mu_i = n_i + sum over neighbors, xi_i = |N_i| * p.
        let nb = scn.topology.neighbors(agent.id).unwrap();
        let expect_mu = agent.nx() + nb.iter().map(|&j| scn.agents[j - 1].nx()).sum::<usize>();
        assert_eq!(rel.dims().mu, expect_mu);
        assert_eq!(rel.dims().xi_y, nb.len() * agent.ny());
        assert_eq!(rel.order[0], agent.id);
        assert!(rel.neighbors().windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn preset_topology_edges() {
    let scn = preset_scenario(2);
    assert_eq!(scn.topology.edges(), vec![(1, 2), (1, 3), (1, 4), (2, 3)]);
    assert_eq!(scn.topology.neighbors(4).unwrap(), &[1]);
}

#[test]
fn twin_scalar_agents_stack() {
    let agents = [scalar_agent(1, -1.0), scalar_agent(2, -1.0)];
    let topo = build_topology(2, &[(1, 2)]).unwrap();
    let rel = build_relative_model(&agents, &topo, 1).unwrap();
    assert_eq!(rel.c, DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
    assert_eq!(rel.a, DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0])));
}

#[test]
fn twin_modes_are_unobservable_from_relative_output() {
    // The common mode x1 + x2 is invisible to y1 - y2; it only breaks detectability when unstable.
    let topo = build_topology(2, &[(1, 2)]).unwrap();
    let stable = build_relative_model(&[scalar_agent(1, -1.0), scalar_agent(2, -1.0)], &topo, 1).unwrap();
    assert!(validate_neighborhood(&stable).detectable);
    let unstable = build_relative_model(&[scalar_agent(1, 1.0), scalar_agent(2, 1.0)], &topo, 1).unwrap();
    let report = validate_neighborhood(&unstable);
    assert!(!report.detectable);
    let (re, im) = report.undetectable_mode.unwrap();
    assert!((re - 1.0).abs() < 1e-9 && im.abs() < 1e-12);
}

#[test]
fn preset_neighborhoods_are_detectable() {
    for rel in preset_relatives(&preset_scenario(1)) {
        assert!(validate_neighborhood(&rel).detectable, "agent {}", rel.agent_id);
    }
}

#[test]
fn topology_rejects_bad_edges() {
    assert_eq!(build_topology(3, &[(1, 1), (2, 3)]), Err(NetworkError::SelfLoop(1)));
    assert_eq!(build_topology(3, &[(1, 4)]), Err(NetworkError::OutOfRange { id: 4, n: 3 }));
    assert_eq!(build_topology(3, &[(1, 2)]), Err(NetworkError::IsolatedAgent(3)));
}

#[test]
fn sensor_substitution_shapes() {
    let rel = &preset_relatives(&preset_scenario(2))[0];
    assert_eq!(rel.df, DMatrix::identity(6, 6));
    assert_eq!(rel.bf, DMatrix::zeros(11, 6));
    let rel = &preset_relatives(&preset_scenario(1))[3];
    assert_eq!(rel.bf, rel.bu);
    assert!(rel.df.iter().all(|v| *v == 0.0));
}

fn int_matrix(rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    use rand::Rng;
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-4i32..=4) as f64)
}

fn random_network(seed: u64, n: usize, p: usize) -> (Vec<AgentModel>, Topology) {
    use rand::Rng;
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (2..=n).map(|j| (r.random_range(1..j), j)).collect();
    for i in 1..=n {
        for j in i + 1..=n {
            if r.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let topo = build_topology(n, &edges).unwrap();
    let agents = (1..=n)
        .map(|id| {
            let nx = r.random_range(1..=3);
            AgentModel::new(
                id,
                int_matrix(&mut r, nx, nx),
                int_matrix(&mut r, nx, 1),
                int_matrix(&mut r, nx, 1),
                int_matrix(&mut r, nx, 1),
                int_matrix(&mut r, p, nx),
                int_matrix(&mut r, p, 1),
                int_matrix(&mut r, p, 1),
            )
            .unwrap()
        })
        .collect();
    (agents, topo)
}

proptest! {
    #[test]
    fn neighborhoods_follow_edges(seed in any::<u64>(), n in 2usize..=6) {
        let (agents, topo) = random_network(seed, n, 2);
        for i in 1..=n {
            let rel = build_relative_model(&agents, &topo, i).unwrap();
            for j in 1..=n {
                if j != i {
                    prop_assert_eq!(rel.order.contains(&j), topo.has_edge(i, j));
                    prop_assert_eq!(topo.has_edge(i, j), topo.has_edge(j, i));
                }
            }
        }
    }

    #[test]
    fn relative_output_rows_are_differences(seed in any::<u64>(), n in 2usize..=5) {
        let (agents, topo) = random_network(seed, n, 2);
        let mut r = rng(seed ^ 0x5a5a);
        for i in 1..=n {
            let rel = build_relative_model(&agents, &topo, i).unwrap();
            let xs: Vec<DMatrix<f64>> = rel.order.iter().map(|&k| int_matrix(&mut r, agents[k - 1].nx(), 1)).collect();
            let mut stacked = Vec::new();
            for x in &xs {
                stacked.extend(x.iter().copied());
            }
            let z = &rel.c * DMatrix::from_column_slice(rel.dims().mu, 1, &stacked);
            for (j, &nb) in rel.neighbors().iter().enumerate() {
                let expect = &agents[i - 1].c * &xs[0] - &agents[nb - 1].c * &xs[j + 1];
                prop_assert_eq!(z.rows(2 * j, 2).clone_owned(), expect);
            }
        }
    }

    #[test]
    fn full_column_rank_output_is_detectable(seed in any::<u64>(), n in 1usize..=4) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, n, n, 3.0);
        let rel = RelativeModel {
            agent_id: 1,
            order: vec![1, 2],
            a,
            bu: DMatrix::zeros(n, 1),
            bf: DMatrix::zeros(n, 1),
            bd: DMatrix::zeros(n, 1),
            c: DMatrix::identity(n, n) + random_matrix(&mut r, n, n, 0.1),
            df: DMatrix::zeros(n, 1),
            dd: DMatrix::zeros(n, 1),
        };
        prop_assert!(validate_neighborhood(&rel).detectable);
    }
}
