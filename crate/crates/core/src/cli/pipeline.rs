//! Synthesize, simulate, evaluate and isolate, writing every artifact to disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::Scenario;
use crate::fdi_evaluation::{
    calibrate_thresholds, evaluate_trajectory, generate_flags, isolate, DecisionWindow, EvaluationSeries, FaultPattern, Thresholds,
    Verdict,
};
use crate::network_model::build_relative_model;
use crate::simulation::{format_f64, simulate_network, write_trajectory_csv, RecordLevel, SimulationError, Trajectory};
use crate::synthesis::{synthesize_observer, CertificateMode, SdpStrategy, SynthesisError, SynthesisResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// How far the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synthesize,
    Simulate,
    Full,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentSynthesisReport {
    pub agent: usize,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<SynthesisDetails>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisDetails {
    pub mode: CertificateMode,
    pub strategy: SdpStrategy,
    pub newton_steps: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub achieved_h2: f64,
    pub achieved_hminus: f64,
    pub optimal_h2: f64,
    pub spectral_abscissa: f64,
    pub verification_pass: bool,
    pub constraint_margins: BTreeMap<String, f64>,
    pub note: Option<String>,
    pub l: Vec<Vec<f64>>,
    pub l_nominal: Vec<Vec<f64>>,
    pub delta_l: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl SynthesisDetails {
    fn from_result(r: &SynthesisResult) -> Self {
        let c = &r.design.c;
        Self {
            mode: r.mode,
            strategy: r.strategy,
            newton_steps: r.newton_steps,
            gamma1: r.gamma1,
            gamma2: r.gamma2,
            achieved_h2: r.achieved_h2,
            achieved_hminus: r.achieved_hminus,
            optimal_h2: (c * &r.y * c.transpose()).trace().max(0.0).sqrt(),
            spectral_abscissa: r.verification.max_closed_loop_real_part,
            verification_pass: r.passed(),
            constraint_margins: r.verification.lmi_residuals.iter().map(|m| (m.name.clone(), m.min_eigenvalue)).collect(),
            note: r.note.clone(),
            l: rows(&r.l),
            l_nominal: rows(&r.l_nominal),
            delta_l: rows(&r.delta_l),
            p: rows(&r.certificate.p),
            n: rows(&r.certificate.n),
            q: rows(&r.certificate.q),
            alpha1: r.certificate.alpha1,
            alpha2: r.certificate.alpha2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub scenario: String,
    /// "ok", "infeasible" or "verification_failed".
    pub status: String,
    pub failed: bool,
    pub agents: Vec<AgentSynthesisReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowVerdict {
    pub window: DecisionWindow,
    pub status: String,
    pub culprit: Option<usize>,
    pub verdict: Verdict,
    /// Block bit-string per agent, e.g. {"1": "111"}.
    pub evidence: BTreeMap<String, String>,
    /// Channel bit-strings per agent, grouped by block.
    pub channel_evidence: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_expected: Option<bool>,
}

fn status_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::NoFault => "no_fault",
        Verdict::AgentFaulty { .. } => "agent_faulty",
        Verdict::NeighborFaulty { .. } => "neighbor_faulty",
        Verdict::InferredFaulty { .. } => "inferred_faulty",
        Verdict::Ambiguous { .. } => "ambiguous",
    }
}

/// Everything the pipeline produced, for callers that inspect results directly.
#[derive(Debug, Default)]
pub struct PipelineOutcome {
    pub exit_code: i32,
    pub synthesis: Vec<std::result::Result<SynthesisResult, String>>,
    pub trajectory: Option<Trajectory>,
    pub thresholds: Option<Thresholds>,
    pub evaluation: Option<EvaluationSeries>,
    pub patterns: Vec<(DecisionWindow, Vec<FaultPattern>)>,
    pub verdicts: Vec<WindowVerdict>,
    pub summary: String,
}

/// Master seeds of the fault-free calibration runs.
pub fn calibration_seeds(master: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(u64::MAX);
    (0..runs).map(|_| rng.next_u64()).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synthesize_all(scn: &Scenario) -> Vec<std::result::Result<SynthesisResult, SynthesisError>> {
    scn.agents
        .par_iter()
        .map(|a| {
            let rel = build_relative_model(&scn.agents, &scn.topology, a.id).map_err(|e| SynthesisError::InvalidOptions(e.to_string()))?;
            synthesize_observer(&scn.substitution.apply(&rel), &scn.config.synthesis)
        })
        .collect()
}

fn synthesis_report(scn: &Scenario, results: &[std::result::Result<SynthesisResult, SynthesisError>]) -> (SynthesisReport, i32) {
    let mut code = EXIT_OK;
    let agents = results
        .iter()
        .zip(&scn.agents)
        .map(|(r, a)| match r {
            Ok(res) => {
                if !res.passed() && code == EXIT_OK {
                    code = EXIT_VERIFICATION;
                }
                AgentSynthesisReport {
                    agent: a.id,
                    status: if res.passed() { "ok".into() } else { "verification_failed".into() },
                    error: None,
                    details: Some(SynthesisDetails::from_result(res)),
                }
            }
            Err(e) => {
                let (status, c) = match e {
                    SynthesisError::UnstableResult(_) => ("verification_failed", EXIT_VERIFICATION),
                    _ => ("infeasible", EXIT_INFEASIBLE),
                };
                if code == EXIT_OK || c == EXIT_INFEASIBLE {
                    code = c;
                }
                AgentSynthesisReport { agent: a.id, status: status.into(), error: Some(e.to_string()), details: None }
            }
        })
        .collect();
    let status = match code {
        EXIT_OK => "ok",
        EXIT_INFEASIBLE => "infeasible",
        _ => "verification_failed",
    };
    (SynthesisReport { scenario: scn.config.name.clone(), status: status.into(), failed: code != EXIT_OK, agents }, code)
}

fn gains(results: &[std::result::Result<SynthesisResult, SynthesisError>]) -> Vec<DMatrix<f64>> {
    results.iter().map(|r| r.as_ref().expect("gains requested after a failed synthesis").l.clone()).collect()
}

pub fn simulate_scenario(scn: &Scenario, gains: &[DMatrix<f64>], record: RecordLevel) -> std::result::Result<Trajectory, SimulationError> {
    simulate_network(&scn.agents, &scn.topology, gains, &scn.signals, &scn.x0, &scn.sim_options(record))
}

pub fn calibrate(scn: &Scenario, gains: &[DMatrix<f64>]) -> Result<Thresholds> {
    let opts = scn.calibration_options();
    let seeds = calibration_seeds(scn.seed(), opts.runs);
    let quiet: Vec<_> = scn.signals.iter().map(|s| s.without_faults()).collect();
    let th = calibrate_thresholds(&opts, &seeds, |seed| {
        let mut so = scn.sim_options(RecordLevel::Residuals);
        so.seed = seed;
        simulate_network(&scn.agents, &scn.topology, gains, &quiet, &scn.x0, &so)
    })?;
    Ok(th)
}

/// Writes evaluation.csv: time, then per agent every J channel followed by its flag.
pub fn write_evaluation_csv(path: &Path, ev: &EvaluationSeries, th: &Thresholds, settle: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["time".to_string()];
    for a in &ev.agents {
        for &j in &a.neighbors {
            header.extend((1..=a.block_rows).map(|k| format!("a{}_J{j}_{k}", a.id)));
        }
        for &j in &a.neighbors {
            header.extend((1..=a.block_rows).map(|k| format!("a{}_flag{j}_{k}", a.id)));
        }
    }
    w.write_record(&header)?;
    let levels: Vec<f64> = ev.agents.iter().map(|a| th.get(a.id)).collect::<std::result::Result<_, _>>()?;
    let mut row = Vec::with_capacity(header.len());
    for (k, t) in ev.time.iter().enumerate() {
        row.clear();
        row.push(format_f64(*t));
        for (a, level) in ev.agents.iter().zip(&levels) {
            let vals = a.j.row(k);
            row.extend(vals.iter().map(|v| format_f64(*v)));
            row.extend(vals.iter().map(|v| if *t >= settle && v > level { "1".to_string() } else { "0".to_string() }));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn decide(scn: &Scenario, ev: &EvaluationSeries, th: &Thresholds) -> Result<(Vec<(DecisionWindow, Vec<FaultPattern>)>, Vec<WindowVerdict>)> {
    let mut patterns = Vec::new();
    let mut verdicts = Vec::new();
    for win in scn.windows() {
        let pats = generate_flags(ev, th, &win, &scn.flag_options())?;
        let verdict = isolate(&pats, &scn.topology);
        let culprit = verdict.culprit();
        let matches_expected = if scn.config.evaluation.windows.is_empty() {
            None
        } else {
            Some(match win.expected {
                Some(e) => culprit == Some(e) && matches!(verdict, Verdict::AgentFaulty { .. }),
                None => verdict == Verdict::NoFault,
            })
        };
        verdicts.push(WindowVerdict {
            window: win.clone(),
            status: status_name(&verdict).into(),
            culprit,
            evidence: pats.iter().map(|p| (p.agent.to_string(), p.block_bits())).collect(),
            channel_evidence: pats.iter().map(|p| (p.agent.to_string(), p.channel_bits())).collect(),
            verdict,
            matches_expected,
        });
        patterns.push((win, pats));
    }
    Ok((patterns, verdicts))
}

fn summarize(scn: &Scenario, out: &PipelineOutcome, report: &SynthesisReport, failure: Option<&str>) -> String {
    let mut s = String::new();
    let cfg = &scn.config;
    let _ = writeln!(s, "scenario: {}", if cfg.name.is_empty() { "(unnamed)" } else { &cfg.name });
    let _ = writeln!(s, "kind: {:?}", cfg.kind);
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "horizon: {} s, h: {} s", cfg.simulation.horizon, cfg.simulation.h);
    let _ = writeln!(s, "status: {}", failure.unwrap_or("ok"));
    let _ = writeln!(s, "exit code: {}", out.exit_code);
    let _ = writeln!(s);
    let _ = writeln!(s, "synthesis ({})", report.status);
    for a in &report.agents {
        match &a.details {
            Some(d) => {
                let _ = writeln!(
                    s,
                    "  agent {}: {:?}, gamma1 = {:.6e}, gamma2 = {:.6e}, H2 = {:.6e}, H- = {:.6e}, abscissa = {:.4}, {}",
                    a.agent,
                    d.mode,
                    d.gamma1,
                    d.gamma2,
                    d.achieved_h2,
                    d.achieved_hminus,
                    d.spectral_abscissa,
                    a.status
                );
            }
            None => {
                let _ = writeln!(s, "  agent {}: {} ({})", a.agent, a.status, a.error.as_deref().unwrap_or(""));
            }
        }
    }
    if let Some(th) = &out.thresholds {
        let _ = writeln!(s);
        let _ = writeln!(s, "thresholds ({} runs, safety {}, settle {} s)", th.runs, th.safety, th.settle);
        for a in &th.agents {
            let _ = writeln!(s, "  agent {}: {:.6e}", a.agent, a.threshold);
        }
    }
    if !out.verdicts.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "verdicts");
        for v in &out.verdicts {
            let ev: Vec<String> = v.evidence.iter().map(|(k, b)| format!("{k}:{b}")).collect();
            let culprit = v.culprit.map_or("-".to_string(), |c| c.to_string());
            let check = match v.matches_expected {
                Some(true) => " [expected]",
                Some(false) => " [UNEXPECTED]",
                None => "",
            };
            let _ = writeln!(
                s,
                "  {} [{}, {}]: {} culprit {} patterns {}{}",
                v.window.name,
                v.window.start,
                v.window.stop,
                v.status,
                culprit,
                ev.join(" "),
                check
            );
        }
    }
    s
}

fn finish(scn: &Scenario, dir: &Path, mut out: PipelineOutcome, report: &SynthesisReport, failure: Option<&str>) -> Result<PipelineOutcome> {
    out.summary = summarize(scn, &out, report, failure);
    fs::write(dir.join("summary.txt"), &out.summary)?;
    Ok(out)
}

/// Runs the pipeline up to `stage`, writing artifacts into `dir`.
pub fn run_stages(scn: &Scenario, dir: &Path, stage: Stage) -> Result<PipelineOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("effective_config.json"), &scn.config)?;

    let results = synthesize_all(scn);
    let (report, code) = synthesis_report(scn, &results);
    write_json(&dir.join("synthesis_report.json"), &report)?;
    let mut out = PipelineOutcome {
        exit_code: code,
        synthesis: results.iter().map(|r| r.as_ref().map(Clone::clone).map_err(|e| e.to_string())).collect(),
        ..Default::default()
    };
    if code != EXIT_OK {
        let why = if code == EXIT_INFEASIBLE { "failed: synthesis infeasible" } else { "failed: verification" };
        return finish(scn, dir, out, &report, Some(why));
    }
    if stage == Stage::Synthesize {
        return finish(scn, dir, out, &report, None);
    }

    let l = gains(&results);
    let traj = match simulate_scenario(scn, &l, RecordLevel::Full) {
        Ok(t) => t,
        Err(e @ SimulationError::NonFiniteState { .. }) => {
            out.exit_code = EXIT_DIVERGED;
            let msg = format!("failed: {e}");
            return finish(scn, dir, out, &report, Some(&msg));
        }
        Err(e) => return Err(e.into()),
    };
    let f = fs::File::create(dir.join("trajectory.csv"))?;
    write_trajectory_csv(&traj, std::io::BufWriter::new(f))?;
    if stage == Stage::Simulate {
        out.trajectory = Some(traj);
        return finish(scn, dir, out, &report, None);
    }

    let th = match calibrate(scn, &l) {
        Ok(th) => th,
        Err(e) if e.chain().any(|c| matches!(c.downcast_ref::<SimulationError>(), Some(SimulationError::NonFiniteState { .. }))) => {
            out.exit_code = EXIT_DIVERGED;
            out.trajectory = Some(traj);
            let msg = format!("failed: calibration diverged: {e}");
            return finish(scn, dir, out, &report, Some(&msg));
        }
        Err(e) => return Err(e),
    };
    write_json(&dir.join("thresholds.json"), &th)?;
    evaluate_into(scn, dir, out, &report, traj, th)
}

fn evaluate_into(
    scn: &Scenario,
    dir: &Path,
    mut out: PipelineOutcome,
    report: &SynthesisReport,
    traj: Trajectory,
    th: Thresholds,
) -> Result<PipelineOutcome> {
    let ev = evaluate_trajectory(&traj, scn.window_samples());
    write_evaluation_csv(&dir.join("evaluation.csv"), &ev, &th, scn.config.evaluation.settle)?;
    let (patterns, verdicts) = decide(scn, &ev, &th)?;
    write_json(&dir.join("verdicts.json"), &verdicts)?;
    out.trajectory = Some(traj);
    out.thresholds = Some(th);
    out.evaluation = Some(ev);
    out.patterns = patterns;
    out.verdicts = verdicts;
    finish(scn, dir, out, report, None)
}

pub fn run_pipeline(scn: &Scenario, dir: &Path) -> Result<PipelineOutcome> {
    run_stages(scn, dir, Stage::Full)
}

/// Evaluates a stored trajectory. Thresholds are read from `thresholds` when
/// given, otherwise recalibrated (which needs the synthesized gains).
pub fn evaluate_stored(scn: &Scenario, trajectory: &Path, thresholds: Option<&Path>, dir: &Path) -> Result<PipelineOutcome> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("effective_config.json"), &scn.config)?;
    let f = fs::File::open(trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
    let traj = crate::simulation::read_trajectory_csv(std::io::BufReader::new(f))?;
    let (th, report, code, synthesis) = match thresholds {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let th: Thresholds = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            let report = SynthesisReport { scenario: scn.config.name.clone(), status: "skipped".into(), failed: false, agents: vec![] };
            (Some(th), report, EXIT_OK, Vec::new())
        }
        None => {
            let results = synthesize_all(scn);
            let (report, code) = synthesis_report(scn, &results);
            write_json(&dir.join("synthesis_report.json"), &report)?;
            let th = if code == EXIT_OK { Some(calibrate(scn, &gains(&results))?) } else { None };
            if let Some(th) = &th {
                write_json(&dir.join("thresholds.json"), th)?;
            }
            let s = results.iter().map(|r| r.as_ref().map(Clone::clone).map_err(|e| e.to_string())).collect();
            (th, report, code, s)
        }
    };
    let out = PipelineOutcome { exit_code: code, synthesis, ..Default::default() };
    match th {
        Some(th) => evaluate_into(scn, dir, out, &report, traj, th),
        None => finish(scn, dir, out, &report, Some("failed: synthesis")),
    }
}
