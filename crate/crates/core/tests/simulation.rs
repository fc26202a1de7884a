mod common;

use std::sync::OnceLock;

use common::*;
use distfdi::cli::pipeline::synthesize_all;
use distfdi::network_model::{build_relative_model, build_topology, AgentModel};
use distfdi::simulation::*;
use nalgebra::{DMatrix, DVector};

fn gains(scenario: u8) -> &'static Vec<DMatrix<f64>> {
    static G: [OnceLock<Vec<DMatrix<f64>>>; 2] = [OnceLock::new(), OnceLock::new()];
    G[scenario as usize - 1].get_or_init(|| synthesize_all(&preset_scenario(scenario)).into_iter().map(|r| r.unwrap().l).collect())
}

fn quiet(sig: &AgentSignals) -> AgentSignals {
    AgentSignals { d: vec![SignalSpec::Zero; sig.d.len()], ..sig.without_faults() }
}

fn run(scenario: u8, signals: &[AgentSignals], horizon: f64, h: f64) -> Trajectory {
    let scn = preset_scenario(scenario).with_overrides(None, Some(h), Some(horizon)).unwrap();
    simulate_network(&scn.agents, &scn.topology, gains(scenario), signals, &scn.x0, &scn.sim_options(RecordLevel::Full)).unwrap()
}

fn stack(traj: &Trajectory, order: &[usize], k: usize, pick: fn(&AgentTrace) -> &Series) -> Vec<f64> {
    order.iter().flat_map(|&j| pick(traj.agent(j).unwrap()).row(k).to_vec()).collect()
}

#[test]
fn signal_examples() {
    let pulse = SignalSpec::Pulse { amplitude: -0.25, start: 10.0, stop: 20.0 };
    assert_eq!(sample_signal(&pulse, 15.0, 1e-3), -0.25);
    assert_eq!(sample_signal(&pulse, 25.0, 1e-3), 0.0);
    assert_eq!(sample_signal(&pulse, 20.0, 1e-3), 0.0);
    assert_eq!(sample_signal(&SignalSpec::Step { amplitude: 1.0, start: 0.0 }, 0.0, 1e-3), 1.0);
    assert_eq!(sample_signal(&SignalSpec::Zero, 3.0, 1e-3), 0.0);
}

#[test]
fn noise_variance_matches_power_over_step() {
    let h = 1e-3;
    let spec = SignalSpec::Noise { power: 0.001, seed: 42 };
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|k| sample_signal(&spec, k as f64 * h, h)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((var / (0.001 / h) - 1.0).abs() < 0.05, "variance {var}");
    // Held constant within a step.
    assert_eq!(sample_signal(&spec, 0.5 * h, h), sample_signal(&spec, 0.0, h));
}

#[test]
fn sub_seeds_are_distinct() {
    let mut seen = std::collections::BTreeSet::new();
    for agent in 1..=4 {
        for channel in 0..4 {
            assert!(seen.insert(sub_seed(7, agent, channel)));
        }
    }
    assert_ne!(sub_seed(7, 1, 0), sub_seed(8, 1, 0));
}

#[test]
fn residual_identity_holds() {
    let scn = preset_scenario(2);
    let traj = run(2, &scn.signals, 12.0, 1e-3);
    // Faults on agent 1 are active in [10, 20); the physical sensor model has Df = ones.
    for (agent, rel) in scn.agents.iter().zip(scn.agents.iter().map(|a| build_relative_model(&scn.agents, &scn.topology, a.id).unwrap())) {
        let tr = traj.agent(agent.id).unwrap();
        let e = extract_error(&traj, agent.id).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..traj.time.len() {
            let ek = DVector::from_row_slice(e.row(k));
            let fk = DVector::from_vec(stack(&traj, &rel.order, k, |t| &t.f));
            let dk = DVector::from_vec(stack(&traj, &rel.order, k, |t| &t.d));
            let predicted = &rel.c * ek + &rel.df * fk + &rel.dd * dk;
            let r = DVector::from_row_slice(tr.r.row(k));
            worst = worst.max((r - predicted).amax());
        }
        assert!(worst < 1e-9, "agent {}: {worst:e}", agent.id);
    }
}

#[test]
fn simulation_is_deterministic() {
    let scn = preset_scenario(1);
    let a = run(1, &scn.signals, 3.0, 1e-3);
    let b = run(1, &scn.signals, 3.0, 1e-3);
    for (x, y) in a.agents.iter().zip(&b.agents) {
        assert_eq!(x.x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(x.r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

fn final_state(traj: &Trajectory) -> DVector<f64> {
    let k = traj.time.len() - 1;
    DVector::from_vec(traj.agents.iter().flat_map(|a| a.x.row(k).iter().chain(a.xhat.row(k)).copied().collect::<Vec<_>>()).collect())
}

#[test]
fn rk4_converges_at_fourth_order() {
    let scn = preset_scenario(1);
    let sig: Vec<_> = scn.signals.iter().map(quiet).collect();
    let coarse = final_state(&run(1, &sig, 2.0, 0.02));
    let fine = final_state(&run(1, &sig, 2.0, 0.01));
    let reference = final_state(&run(1, &sig, 2.0, 0.005));
    let ratio = (&coarse - &reference).norm() / (&fine - &reference).norm();
    // Against an h/4 reference the ideal ratio is (1 - 1/256) / (1/16 - 1/256) = 17.
    assert!((8.0..=24.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_scenario_stays_at_rest() {
    let scn = preset_scenario(1);
    let sig: Vec<AgentSignals> = scn
        .signals
        .iter()
        .map(|s| AgentSignals { u: vec![SignalSpec::Zero; s.u.len()], d: vec![SignalSpec::Zero; s.d.len()], f: vec![SignalSpec::Zero; s.f.len()] })
        .collect();
    let x0: Vec<DVector<f64>> = scn.agents.iter().map(|a| DVector::zeros(a.nx())).collect();
    let mut opts = scn.sim_options(RecordLevel::Full);
    opts.horizon = 2.0;
    let traj = simulate_network(&scn.agents, &scn.topology, gains(1), &sig, &x0, &opts).unwrap();
    for a in &traj.agents {
        assert!(a.x.data.iter().chain(&a.xhat.data).chain(&a.r.data).all(|v| *v == 0.0));
        assert!(extract_error(&traj, a.id).unwrap().data.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn error_starts_at_true_state_and_decays() {
    let scn = preset_scenario(1);
    let traj = run(1, &scn.signals, 9.0, 1e-3);
    for a in &scn.agents {
        let rel = build_relative_model(&scn.agents, &scn.topology, a.id).unwrap();
        let e = extract_error(&traj, a.id).unwrap();
        assert_eq!(e.row(0).to_vec(), stack(&traj, &rel.order, 0, |t| &t.x));
    }
    let e4 = extract_error(&traj, 4).unwrap();
    let norm = |k: usize| e4.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(traj.time.len() - 1) < 0.1 * norm(0));
}

#[test]
fn noise_free_residuals_vanish() {
    for scenario in [1, 2] {
        let scn = preset_scenario(scenario);
        let sig: Vec<_> = scn.signals.iter().map(quiet).collect();
        let traj = run(scenario, &sig, 10.0, 1e-3);
        for a in &traj.agents {
            let worst = (0..traj.time.len())
                .filter(|&k| traj.time[k] >= 8.0)
                .map(|k| a.r.row(k).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "scenario {scenario} agent {}: {worst:e}", a.id);
        }
    }
}

#[test]
fn csv_round_trip() {
    let scn = preset_scenario(2);
    let traj = run(2, &scn.signals, 0.5, 1e-3);
    let mut buf = Vec::new();
    write_trajectory_csv(&traj, &mut buf).unwrap();
    let header = String::from_utf8(buf.clone()).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.starts_with("time,a1_x1,"));
    assert!(header.contains("a1_r2_1") && header.contains("a4_xh5") && header.contains("a3_f1"));
    let back = read_trajectory_csv(buf.as_slice()).unwrap();
    assert_eq!(back.time, traj.time);
    for (x, y) in traj.agents.iter().zip(&back.agents) {
        assert_eq!(x.order, y.order);
        assert_eq!(x.x, y.x);
        assert_eq!(x.xhat, y.xhat);
        assert_eq!(x.r, y.r);
        assert_eq!(x.f, y.f);
    }
}

#[test]
fn divergence_is_reported() {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let agents: Vec<AgentModel> =
        (1..=2).map(|id| AgentModel::new(id, m(5.0), m(1.0), m(0.0), m(0.0), m(1.0), m(0.0), m(0.0)).unwrap()).collect();
    let topo = build_topology(2, &[(1, 2)]).unwrap();
    let gains = vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)];
    let sig = vec![AgentSignals { u: vec![SignalSpec::Zero], d: vec![SignalSpec::Zero], f: vec![SignalSpec::Zero] }; 2];
    let x0 = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)];
    let opts = SimOptions { horizon: 10.0, h: 1e-3, seed: 0, record: RecordLevel::Residuals };
    let err = simulate_network(&agents, &topo, &gains, &sig, &x0, &opts).unwrap_err();
    assert!(matches!(err, SimulationError::NonFiniteState { .. }), "{err}");
}
