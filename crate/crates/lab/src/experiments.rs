//! The registered experiments. Each returns its output files as bytes plus
//! the tolerance checks that decide the exit code.

use std::fmt::Write as _;
use std::sync::Arc;

use mfgc_core::measures::{ensemble_law_distance, Scenario, ScenarioEnsemble};
use mfgc_core::mfc::{chaos_distances, equivalence_report, pareto_limit_experiment};
use mfgc_core::mfg::{
    fokker_planck_residual, mfg_fixed_point, simulate_conditional_mkv, EquilibriumSolution,
    FixedPointConfig, TestFunction,
};
use mfgc_core::model::catalog::{LqParams, ModelConfig};
use mfgc_core::model::{ModelSpec, NoisePath, TimeGrid};
use mfgc_core::noise_recovery::{recover_noise_global, recover_noise_recursive, roundtrip_check};
use mfgc_core::nplayer::{
    best_response, lift_policy, nash_gap, simulate_game, DeviationPolicy, NPlayerPolicySet,
    ResponseClass,
};
use mfgc_core::oracle::riccati;
use mfgc_core::policy::{ConstantPolicy, MarkovPolicy};
use mfgc_core::rng::derive_seed;
use mfgc_core::stats::Estimate;
use serde::Serialize;

use crate::config::{
    ChaosConfig, ConverseConfig, ExperimentConfig, FpConfig, LabConfig, MfcConfig, NashToMfgConfig,
    RecoveryConfig,
};

// seed tags of the lab's own streams
const TAG_GAP: u64 = 0x6761;
const TAG_RESPONSE: u64 = 0x6272;
const TAG_GAME: u64 = 0x676d;
const TAG_CHAOS: u64 = 0x6368;
const TAG_MFC: u64 = 0x6d66;
const TAG_PARETO: u64 = 0x7061;
const TAG_FP: u64 = 0x6670;
const TAG_RECOVER: u64 = 0x7263;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    /// Human-readable acceptance rule, e.g. "<= 0.05".
    pub rule: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, observed: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            observed,
            rule: format!("<= {bound}"),
            passed: observed <= bound,
        }
    }

    pub fn within(name: &str, observed: f64, (lo, hi): (f64, f64)) -> Self {
        Check {
            name: name.into(),
            observed,
            rule: format!("in [{lo}, {hi}]"),
            passed: observed >= lo && observed <= hi,
        }
    }

    pub fn holds(name: &str, observed: f64, rule: &str, passed: bool) -> Self {
        Check {
            name: name.into(),
            observed,
            rule: rule.into(),
            passed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// (file name, contents), written in this order.
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn file(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        self.file(name, s);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] mfgc_core::Error),
}

/// Estimates of a curve over N, ascending in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub players: usize,
    pub estimate: Estimate,
}

/// Every consecutive increase stays below 2 combined standard errors.
pub fn decreasing_up_to_2se(curve: &[CurvePoint]) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for w in curve.windows(2) {
        let rise = w[1].estimate.mean - w[0].estimate.mean;
        worst = worst.max(rise - 2.0 * w[0].estimate.combined_se(&w[1].estimate));
    }
    (worst < 0.0 || curve.len() < 2, worst)
}

/// The first point exceeds the last by more than 2 combined standard errors.
pub fn separated_by_2se(first: Estimate, last: Estimate) -> (bool, f64) {
    let margin = first.mean - last.mean - 2.0 * first.combined_se(&last);
    (margin > 0.0, margin)
}

fn csv_curve(header: &str, curve: &[CurvePoint]) -> String {
    let mut s = format!("players,{header},se\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{}", p.players, p.estimate.mean, p.estimate.se);
    }
    s
}

/// Mean field equilibrium driven by the run seed.
pub fn solve_equilibrium(
    spec: &ModelSpec,
    cfg: &FixedPointConfig,
    seed: u64,
) -> Result<EquilibriumSolution, LabError> {
    let cfg = FixedPointConfig {
        seed,
        ..cfg.clone()
    };
    Ok(mfg_fixed_point(spec, &cfg)?)
}

#[derive(Serialize)]
struct EquilibriumSummary<'a> {
    converged: bool,
    iterations: usize,
    trace: &'a [f64],
    epsilon: Estimate,
    value: Estimate,
    mc_value: Estimate,
    extrapolated: usize,
}

fn equilibrium_summary(eq: &EquilibriumSolution) -> EquilibriumSummary<'_> {
    EquilibriumSummary {
        converged: eq.converged,
        iterations: eq.iterations,
        trace: &eq.trace,
        epsilon: eq.epsilon,
        value: eq.value,
        mc_value: eq.mc_value,
        extrapolated: eq.extrapolated,
    }
}

/// Relative L² error of the equilibrium conditional means against the
/// Riccati mean path on each scenario's noise.
pub fn riccati_mean_error(prm: &LqParams, eq: &EquilibriumSolution) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for sc in eq.scenarios.scenarios() {
        let means: Vec<f64> = sc.flow.frames().iter().map(|f| f.mean_state()[0]).collect();
        let oracle = riccati::mfg_mean_path(prm, &sc.noise.first_coordinate(), means[0]);
        for (m, o) in means.iter().zip(&oracle) {
            num += (m - o) * (m - o);
            den += o * o;
        }
    }
    (num / den).sqrt()
}

fn equilibrium_policy(eq: &EquilibriumSolution) -> Arc<dyn MarkovPolicy> {
    Arc::new(eq.policy.clone())
}

/// Gap of player 0 (standing for all, by symmetry) in the lifted profile.
pub fn gap_curve(
    spec: &ModelSpec,
    eq: &EquilibriumSolution,
    players: &[usize],
    class: &ResponseClass,
    paths: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, LabError> {
    let grid = eq.scenarios.grid().clone();
    let beta = equilibrium_policy(eq);
    players
        .iter()
        .map(|&n| {
            let set = lift_policy(beta.clone(), n)?;
            let rep = nash_gap(
                spec,
                &set,
                class,
                &grid,
                paths,
                derive_seed(seed, &[TAG_GAP, n as u64]),
            )?;
            Ok(CurvePoint {
                players: n,
                estimate: rep.gaps[0].gap,
            })
        })
        .collect()
}

/// Symmetric profile after `rounds` of best response from the lifted
/// equilibrium policy, with the gain found in each round.
pub fn nash_profile(
    spec: &ModelSpec,
    beta: Arc<dyn MarkovPolicy>,
    players: usize,
    grid: &TimeGrid,
    cfg: &NashToMfgConfig,
    seed: u64,
) -> Result<(NPlayerPolicySet, Vec<Estimate>), LabError> {
    let mut set = lift_policy(beta, players)?;
    let mut gains = Vec::new();
    for round in 0..cfg.rounds {
        let s = derive_seed(seed, &[TAG_RESPONSE, players as u64, round as u64]);
        let rep = best_response(spec, &set, 0, &cfg.response, grid, cfg.response_paths, s)?;
        gains.push(rep.gain);
        match rep.table {
            Some(table) => {
                set = NPlayerPolicySet::symmetric(
                    Arc::new(DeviationPolicy { table, players }),
                    players,
                )?
            }
            None => break,
        }
    }
    Ok((set, gains))
}

/// ensemble_law_distance between the empirical N-player flows and the
/// equilibrium flows, on the equilibrium's common-noise paths. Each
/// replicate redraws the idiosyncratic noise.
pub fn law_distance_curve(
    spec: &ModelSpec,
    eq: &EquilibriumSolution,
    sets: &[NPlayerPolicySet],
    replicates: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, LabError> {
    use rayon::prelude::*;
    sets.iter()
        .map(|set| {
            let ds = (0..replicates)
                .map(|r| {
                    let game_seed = derive_seed(seed, &[TAG_GAME, r as u64]);
                    let scenarios = eq
                        .scenarios
                        .scenarios()
                        .par_iter()
                        .enumerate()
                        .map(|(s, sc)| {
                            let tr =
                                simulate_game(spec, set, sc.noise.clone(), game_seed, s as u64)?;
                            Ok(Scenario {
                                noise: sc.noise.clone(),
                                flow: tr.empirical_flow()?,
                            })
                        })
                        .collect::<mfgc_core::Result<Vec<_>>>()?;
                    Ok(ensemble_law_distance(
                        &ScenarioEnsemble::new(scenarios)?,
                        &eq.scenarios,
                        1.0,
                    )?)
                })
                .collect::<Result<Vec<f64>, LabError>>()?;
            Ok(CurvePoint {
                players: set.players(),
                estimate: Estimate::from_samples(&ds),
            })
        })
        .collect()
}

fn nash_to_mfg(spec: &ModelSpec, cfg: &NashToMfgConfig, seed: u64) -> Result<Outcome, LabError> {
    let eq = solve_equilibrium(spec, &cfg.equilibrium, seed)?;
    nash_to_mfg_with(spec, &eq, cfg, seed)
}

/// The nash-to-mfg study against a precomputed equilibrium.
pub fn nash_to_mfg_with(
    spec: &ModelSpec,
    eq: &EquilibriumSolution,
    cfg: &NashToMfgConfig,
    seed: u64,
) -> Result<Outcome, LabError> {
    let grid = eq.scenarios.grid().clone();
    let beta = equilibrium_policy(eq);
    let mut sets = Vec::new();
    let mut eps = String::from("players,round,gain,se\n");
    for &n in &cfg.players {
        let (set, gains) = nash_profile(spec, beta.clone(), n, &grid, cfg, seed)?;
        for (r, g) in gains.iter().enumerate() {
            let _ = writeln!(eps, "{n},{r},{},{}", g.mean, g.se);
        }
        sets.push(set);
    }
    let curve = law_distance_curve(spec, eq, &sets, cfg.replicates, seed)?;
    let mut out = Outcome::default();
    out.json("equilibrium.json", &equilibrium_summary(eq));
    out.file("epsilon.csv", eps);
    out.file("distances.csv", csv_curve("distance", &curve));
    if curve.len() > 1 {
        let (ok, worst) = decreasing_up_to_2se(&curve);
        out.checks.push(Check::holds(
            "distance decreasing in N (2 SE)",
            worst,
            "worst rise - 2 SE < 0",
            ok,
        ));
        let (ok, margin) = separated_by_2se(curve[0].estimate, curve[curve.len() - 1].estimate);
        out.checks.push(Check::holds(
            "distance first > last (2 SE)",
            margin,
            "margin > 0",
            ok,
        ));
    }
    Ok(out)
}

fn converse(spec: &ModelSpec, cfg: &ConverseConfig, seed: u64) -> Result<Outcome, LabError> {
    let eq = solve_equilibrium(spec, &cfg.equilibrium, seed)?;
    converse_with(spec, &eq, cfg, seed)
}

pub fn converse_with(
    spec: &ModelSpec,
    eq: &EquilibriumSolution,
    cfg: &ConverseConfig,
    seed: u64,
) -> Result<Outcome, LabError> {
    let gaps = gap_curve(spec, eq, &cfg.players, &cfg.response, cfg.gap_paths, seed)?;
    let mut out = Outcome::default();
    out.json("equilibrium.json", &equilibrium_summary(eq));
    out.file("gaps.csv", csv_curve("gap", &gaps));
    if gaps.len() > 1 {
        let (ok, worst) = decreasing_up_to_2se(&gaps);
        out.checks.push(Check::holds(
            "gap nonincreasing in N (2 SE)",
            worst,
            "worst rise - 2 SE < 0",
            ok,
        ));
        let (ok, margin) = separated_by_2se(gaps[0].estimate, gaps[gaps.len() - 1].estimate);
        out.checks.push(Check::holds(
            "gap first > last (2 SE)",
            margin,
            "margin > 0",
            ok,
        ));
    }
    if cfg.replicates > 0 {
        let beta = equilibrium_policy(eq);
        let sets = cfg
            .players
            .iter()
            .map(|&n| lift_policy(beta.clone(), n))
            .collect::<mfgc_core::Result<Vec<_>>>()?;
        let curve = law_distance_curve(spec, eq, &sets, cfg.replicates, seed)?;
        out.file("distances.csv", csv_curve("distance", &curve));
    }
    Ok(out)
}

fn chaos(spec: &ModelSpec, cfg: &ChaosConfig, seed: u64) -> Result<Outcome, LabError> {
    let eq = solve_equilibrium(spec, &cfg.equilibrium, seed)?;
    chaos_with(spec, &eq, cfg, seed)
}

pub fn chaos_with(
    spec: &ModelSpec,
    eq: &EquilibriumSolution,
    cfg: &ChaosConfig,
    seed: u64,
) -> Result<Outcome, LabError> {
    let grid = eq.scenarios.grid().clone();
    let pts = chaos_distances(
        spec,
        equilibrium_policy(eq),
        &cfg.players,
        &grid,
        cfg.paths,
        cfg.particles,
        derive_seed(seed, &[TAG_CHAOS]),
    )?;
    let curve: Vec<CurvePoint> = pts
        .iter()
        .map(|p| CurvePoint {
            players: p.players,
            estimate: p.distance,
        })
        .collect();
    let mut out = Outcome::default();
    out.json("equilibrium.json", &equilibrium_summary(eq));
    out.file("chaos.csv", csv_curve("w1_terminal", &curve));
    if curve.len() > 1 {
        let (ok, worst) = decreasing_up_to_2se(&curve);
        out.checks.push(Check::holds(
            "chaos distance decreasing in N (2 SE)",
            worst,
            "worst rise - 2 SE < 0",
            ok,
        ));
        let (ok, margin) = separated_by_2se(curve[0].estimate, curve[curve.len() - 1].estimate);
        out.checks.push(Check::holds(
            "chaos distance first > last (2 SE)",
            margin,
            "margin > 0",
            ok,
        ));
    }
    Ok(out)
}

fn mfc_equivalence(
    model: &ModelConfig,
    spec: &ModelSpec,
    cfg: &MfcConfig,
    seed: u64,
) -> Result<Outcome, LabError> {
    let rep = equivalence_report(
        spec,
        &cfg.budget,
        cfg.rel_tol,
        derive_seed(seed, &[TAG_MFC]),
    )?;
    let mut out = Outcome::default();
    let (vc, vo) = (rep.closed.value, rep.open.value);
    let mut traces = String::from("evaluation_round,closed,open\n");
    for i in 0..rep.closed.trace.len().max(rep.open.trace.len()) {
        let cell = |t: &[f64]| t.get(i).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            traces,
            "{i},{},{}",
            cell(&rep.closed.trace),
            cell(&rep.open.trace)
        );
    }
    let bound = (cfg.rel_tol * vc.mean.abs()).max(3.0 * rep.combined_se);
    out.checks
        .push(Check::at_most("|V^c - V^o|", rep.difference.abs(), bound));
    let oracle = match model {
        ModelConfig::Lq1d(p) => Some(riccati::mfc_value(p, cfg.budget.steps)),
        _ => None,
    };
    if let Some(v) = oracle {
        out.checks.push(Check::at_most(
            "closed-loop vs Riccati (relative)",
            (vc.mean - v).abs() / v.abs(),
            cfg.oracle_tol,
        ));
        out.checks.push(Check::at_most(
            "open-loop vs Riccati (relative)",
            (vo.mean - v).abs() / v.abs(),
            cfg.oracle_tol,
        ));
    }
    let mut values = serde_json::json!({
        "closed": { "value": vc, "search_value": rep.closed.search_value, "evaluations": rep.closed.evaluations, "budget_exhausted": rep.closed.budget_exhausted },
        "open": { "value": vo, "search_value": rep.open.search_value, "evaluations": rep.open.evaluations, "budget_exhausted": rep.open.budget_exhausted },
        "difference": rep.difference,
        "combined_se": rep.combined_se,
        "riccati": oracle,
    });
    if !cfg.pareto_players.is_empty() {
        let curve = pareto_limit_experiment(
            spec,
            &cfg.pareto_players,
            &rep.closed,
            cfg.budget.steps,
            cfg.pareto_paths,
            derive_seed(seed, &[TAG_PARETO]),
        )?;
        let pts: Vec<CurvePoint> = curve
            .points
            .iter()
            .map(|p| CurvePoint {
                players: p.players,
                estimate: p.value,
            })
            .collect();
        out.file("pareto.csv", csv_curve("pareto_value", &pts));
        let last = pts[pts.len() - 1].estimate.mean;
        out.checks.push(Check::at_most(
            "Pareto(max N) vs V^c (relative)",
            (last - vc.mean).abs() / vc.mean.abs(),
            cfg.pareto_tol,
        ));
        values["pareto"] = serde_json::to_value(&pts).expect("curve serializes");
    }
    out.json("values.json", &values);
    out.file("traces.csv", traces);
    out.json("closed_policy.json", &rep.closed.policy);
    out.json("open_policy.json", &rep.open.policy);
    Ok(out)
}

fn noise_recovery(spec: &ModelSpec, cfg: &RecoveryConfig, seed: u64) -> Result<Outcome, LabError> {
    let grid = spec.grid(cfg.steps)?;
    let policy = ConstantPolicy(spec.controls.nearest(&vec![0.0; spec.controls.dim()]));
    let mut errors = String::from("particles,run,sup_error,worst_node,recursive\n");
    let mut means = Vec::new();
    let mut worst_at_largest: f64 = 0.0;
    for &m in &cfg.particles {
        let mut sum = 0.0;
        for r in 0..cfg.seeds {
            let rep = roundtrip_check(
                spec,
                &policy,
                &grid,
                m,
                derive_seed(seed, &[TAG_RECOVER, r as u64]),
            )?;
            let _ = writeln!(
                errors,
                "{m},{r},{},{},{}",
                rep.sup_error, rep.worst_node, rep.recursive
            );
            sum += rep.sup_error;
            if m == cfg.particles[cfg.particles.len() - 1] {
                worst_at_largest = worst_at_largest.max(rep.sup_error);
            }
        }
        means.push(sum / cfg.seeds as f64);
    }
    // recovered against true path for the first run at the largest M
    let m = cfg.particles[cfg.particles.len() - 1];
    let s = derive_seed(seed, &[TAG_RECOVER, 0]);
    let truth = NoisePath::sample(&grid, spec.n, s, 0);
    let flow = simulate_conditional_mkv(spec, &policy, &truth, m, s)?;
    let rec = match &spec.noise_feedback {
        Some(fb) => recover_noise_recursive(spec, &flow, fb.stride)?,
        None => recover_noise_global(spec, &flow)?,
    };
    let mut path = String::from("t");
    for d in 0..spec.n {
        let _ = write!(path, ",true_{d},recovered_{d}");
    }
    path.push('\n');
    for k in 0..=grid.steps() {
        let _ = write!(path, "{}", grid.time(k));
        for d in 0..spec.n {
            let _ = write!(path, ",{},{}", truth.value(k)[d], rec.value(k)[d]);
        }
        path.push('\n');
    }
    let mut out = Outcome::default();
    out.file("errors.csv", errors);
    out.file("path.csv", path);
    out.checks.push(Check::at_most(
        &format!("sup error at M={m} (worst run)"),
        worst_at_largest,
        cfg.tol,
    ));
    if let (Some(range), true) = (cfg.ratio_range, means.len() > 1) {
        let ratio = means[0] / means[means.len() - 1];
        out.checks.push(Check::within(
            &format!("mean error ratio M={} / M={m}", cfg.particles[0]),
            ratio,
            range,
        ));
    }
    Ok(out)
}

/// Least-squares slope of ln y against ln x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Summary of the residual study at one Δt.
#[derive(Debug, Clone, Serialize)]
pub struct FpLevel {
    pub steps: usize,
    pub dt: f64,
    /// Largest max |N_t(f)| over the runs.
    pub worst_run: f64,
    /// max over (f, t) of |run-averaged N_t(f)|.
    pub averaged: f64,
}

pub fn fp_levels(
    spec: &ModelSpec,
    cfg: &FpConfig,
    seed: u64,
) -> Result<(Vec<FpLevel>, String), LabError> {
    use rayon::prelude::*;
    let tests = TestFunction::dictionary();
    let policy = ConstantPolicy(spec.controls.nearest(&vec![0.0; spec.controls.dim()]));
    let mut table = String::new();
    let mut levels = Vec::new();
    for (li, &steps) in cfg.steps.iter().enumerate() {
        let grid = spec.grid(steps)?;
        let runs = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let s = derive_seed(seed, &[TAG_FP, r as u64]);
                let b = NoisePath::sample(&grid, spec.n, s, 0);
                let flow = simulate_conditional_mkv(spec, &policy, &b, cfg.particles, s)?;
                fokker_planck_residual(spec, &flow, &b, &tests)
            })
            .collect::<mfgc_core::Result<Vec<_>>>()?;
        if li == 0 {
            table.push_str("t");
            for f in &runs[0].functions {
                let _ = write!(table, ",{f}");
            }
            table.push('\n');
            for (k, t) in runs[0].times.iter().enumerate() {
                let _ = write!(table, "{t}");
                for row in &runs[0].values {
                    let _ = write!(table, ",{}", row[k]);
                }
                table.push('\n');
            }
        }
        let worst_run = runs.iter().map(|r| r.max_abs()).fold(0.0, f64::max);
        let mut averaged: f64 = 0.0;
        for f in 0..tests.len() {
            for k in 0..=steps {
                let avg = runs.iter().map(|r| r.values[f][k]).sum::<f64>() / runs.len() as f64;
                averaged = averaged.max(avg.abs());
            }
        }
        levels.push(FpLevel {
            steps,
            dt: grid.dt(),
            worst_run,
            averaged,
        });
    }
    Ok((levels, table))
}

fn fp_residual(spec: &ModelSpec, cfg: &FpConfig, seed: u64) -> Result<Outcome, LabError> {
    let (levels, table) = fp_levels(spec, cfg, seed)?;
    let mut out = Outcome::default();
    let mut summary = String::from("steps,dt,worst_run,averaged\n");
    for l in &levels {
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            l.steps, l.dt, l.worst_run, l.averaged
        );
    }
    out.file("residuals.csv", table);
    out.file("levels.csv", summary);
    let worst = levels.iter().map(|l| l.worst_run).fold(0.0, f64::max);
    out.checks
        .push(Check::at_most("max residual (worst run)", worst, cfg.tol));
    if let (Some(range), true) = (cfg.slope_range, levels.len() > 1) {
        let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
        let ys: Vec<f64> = levels.iter().map(|l| l.averaged).collect();
        let slope = log_log_slope(&dts, &ys);
        out.checks.push(Check::within(
            "log-log slope of averaged max residual vs dt",
            slope,
            range,
        ));
    }
    Ok(out)
}

/// Runs the configured experiment inside a pool of `threads` workers (or
/// the global pool).
pub fn run_experiment(cfg: &LabConfig) -> Result<Outcome, LabError> {
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| crate::config::ConfigError::new(None, e.to_string()))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let spec = cfg
        .model
        .build()
        .map_err(|e| crate::config::ConfigError::new(None, e.to_string()))?;
    let seed = cfg.seed;
    let mut out = match &cfg.experiment {
        ExperimentConfig::NashToMfg(c) => nash_to_mfg(&spec, c, seed)?,
        ExperimentConfig::Converse(c) => converse(&spec, c, seed)?,
        ExperimentConfig::Chaos(c) => chaos(&spec, c, seed)?,
        ExperimentConfig::MfcEquivalence(c) => mfc_equivalence(&cfg.model, &spec, c, seed)?,
        ExperimentConfig::NoiseRecovery(c) => noise_recovery(&spec, c, seed)?,
        ExperimentConfig::FpResidual(c) => fp_residual(&spec, c, seed)?,
    };
    finish(cfg, &mut out);
    Ok(out)
}

/// Appends the resolved config and the manifest.
pub fn finish(cfg: &LabConfig, out: &mut Outcome) {
    let names: Vec<String> = out.files.iter().map(|f| f.0.clone()).collect();
    let manifest = serde_json::json!({
        "tool": "mfgc-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.kind(),
        "model": cfg.model,
        "seed": cfg.seed,
        "parameters": cfg.experiment,
        "outputs": names,
        "checks": out.checks,
        "passed": out.passed(),
    });
    // the worker count is not part of the result
    let echoed = LabConfig {
        threads: None,
        ..cfg.clone()
    };
    out.file("config.toml", echoed.to_toml());
    out.json("manifest.json", &manifest);
}

/// Writes every file of `out` under `dir`.
pub fn write_outcome(dir: &std::path::Path, out: &Outcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
