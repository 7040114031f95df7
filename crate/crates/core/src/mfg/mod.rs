//! Conditional McKean–Vlasov simulation, best responses against frozen
//! flows, the damped Picard fixed point and the Fokker–Planck residual.

mod env;
mod fp;
mod simulate;

use serde::Serialize;

use crate::dp::{solve, DpSolution, Mode};
use crate::error::{domain, Result};
use crate::interp::Axis;
use crate::measures::{flow_distance, Ensemble, MeasureFlow, Scenario, ScenarioEnsemble};
use crate::model::{ModelSpec, NoisePath, TimeGrid};
use crate::policy::{ConstantPolicy, FeedbackTable, MarkovPolicy, MeasureFeatures, ScenarioTables};
use crate::rng::{derive_seed, stream, Domain};
use crate::stats::Estimate;

pub use env::{default_state_axis, FrozenEnvironment, ScenarioEnvironment};
pub(crate) use env::{fit_line, nearest, padded_axis};
pub use fp::{fokker_planck_residual, FpResidual, TestFunction};
pub use simulate::{
    particle_rewards, simulate_conditional_mkv, simulate_particles, Feedback, ParticleControl,
    PathFeatures,
};

/// How a best response observes the frozen flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Through the conditional mean; the policy is adapted and liftable.
    #[default]
    Mean,
    /// One table per scenario with the common-noise increments read from it.
    ScenarioIndexed,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpOptions {
    pub x_count: usize,
    pub m_count: usize,
    /// Explicit state axis `(lo, hi)`; default spans six standard deviations.
    pub x_range: Option<(f64, f64)>,
    pub features: FeatureMode,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            x_count: 121,
            m_count: 15,
            x_range: None,
            features: FeatureMode::Mean,
        }
    }
}

impl DpOptions {
    pub(crate) fn x_axis(&self, frozen: &ScenarioEnsemble) -> Result<Axis> {
        match self.x_range {
            Some((lo, hi)) => Axis::new(lo, hi, self.x_count),
            None => default_state_axis(frozen, self.x_count),
        }
    }
}

/// Feedback produced by the mean field solver.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MfgPolicy {
    Constant { index: usize },
    Table(FeedbackTable),
    Scenario(ScenarioTables),
}

impl MarkovPolicy for MfgPolicy {
    fn control_index(&self, step: usize, t: f64, x: &[f64], f: &MeasureFeatures) -> usize {
        match self {
            MfgPolicy::Constant { index } => ConstantPolicy(*index).control_index(step, t, x, f),
            MfgPolicy::Table(tb) => tb.control_index(step, t, x, f),
            MfgPolicy::Scenario(s) => s.control_index(step, t, x, f),
        }
    }

    fn reads_scenario(&self) -> bool {
        matches!(self, MfgPolicy::Scenario(_))
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub policy: MfgPolicy,
    /// Scenario average of ∫ V_0 dν with its standard error.
    pub value: Estimate,
    pub per_scenario: Vec<f64>,
    /// Interpolation queries that left the grid (flat extrapolation).
    pub extrapolated: usize,
}

fn per_scenario_values(frozen: &ScenarioEnsemble, sols: &[DpSolution]) -> Vec<f64> {
    frozen
        .scenarios()
        .iter()
        .enumerate()
        .map(|(s, sc)| {
            let f0 = sc.flow.frame(0);
            let sol = if sols.len() == 1 { &sols[0] } else { &sols[s] };
            sol.integrate(f0, f0.mean_state()[0])
        })
        .collect()
}

fn run_dp(
    spec: &ModelSpec,
    frozen: &ScenarioEnsemble,
    opts: &DpOptions,
    mode: Mode,
    policy: Option<&dyn MarkovPolicy>,
) -> Result<Vec<DpSolution>> {
    let x_axis = opts.x_axis(frozen)?;
    match opts.features {
        FeatureMode::Mean => {
            let env = FrozenEnvironment::new(spec, frozen, opts.m_count)?;
            Ok(vec![solve(spec, &env, x_axis, mode, policy)?])
        }
        FeatureMode::ScenarioIndexed => (0..frozen.len())
            .map(|s| {
                let env = ScenarioEnvironment::new(spec, frozen, s);
                solve(spec, &env, x_axis, mode, policy)
            })
            .collect(),
    }
}

/// Optimal feedback against frozen flows by backward induction.
pub fn best_response_dp(
    spec: &ModelSpec,
    frozen: &ScenarioEnsemble,
    opts: &DpOptions,
) -> Result<BestResponse> {
    let sols = run_dp(spec, frozen, opts, Mode::Optimize, None)?;
    let per = per_scenario_values(frozen, &sols);
    let extrapolated = sols.iter().map(|s| s.extrapolated).sum();
    let policy = if sols.len() == 1 && opts.features == FeatureMode::Mean {
        MfgPolicy::Table(sols.into_iter().next().unwrap().table)
    } else {
        MfgPolicy::Scenario(ScenarioTables {
            tables: sols.into_iter().map(|s| s.table).collect(),
        })
    };
    Ok(BestResponse {
        policy,
        value: Estimate::from_samples(&per),
        per_scenario: per,
        extrapolated,
    })
}

/// Value of a given feedback against frozen flows, on the same grid and
/// quadrature as [`best_response_dp`].
pub fn evaluate_policy_dp(
    spec: &ModelSpec,
    frozen: &ScenarioEnsemble,
    policy: &dyn MarkovPolicy,
    opts: &DpOptions,
) -> Result<Vec<f64>> {
    let sols = run_dp(spec, frozen, opts, Mode::Evaluate, Some(policy))?;
    Ok(per_scenario_values(frozen, &sols))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub scenarios: usize,
    pub particles: usize,
    pub steps: usize,
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub dp: DpOptions,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            scenarios: 16,
            particles: 10_000,
            steps: 100,
            damping: 1.0,
            max_iter: 8,
            tol: 0.05,
            seed: 1,
            dp: DpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSolution {
    pub policy: MfgPolicy,
    /// Per-scenario flows of the returned iterate.
    #[serde(skip)]
    pub scenarios: ScenarioEnsemble,
    /// Best-response value minus the policy's value, both against the
    /// returned flows.
    pub epsilon: Estimate,
    /// Value of the policy against its flows (dynamic programming).
    pub value: Estimate,
    /// Monte Carlo value of the policy along the simulated particles.
    pub mc_value: Estimate,
    pub best_response_value: Estimate,
    /// flow_distance between successive iterates.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub extrapolated: usize,
}

/// Noise paths used by scenario `s` of a run with `seed`.
pub fn scenario_noise(grid: &TimeGrid, n: usize, seed: u64, s: usize) -> NoisePath {
    NoisePath::sample(grid, n, seed, s as u64)
}

/// Particle seed of scenario `s`.
pub fn scenario_particle_seed(seed: u64, s: usize) -> u64 {
    derive_seed(seed, &[Domain::Scenario as u64, s as u64])
}

fn simulate_all(
    spec: &ModelSpec,
    policy: &MfgPolicy,
    noises: &[NoisePath],
    m: usize,
    seed: u64,
) -> Result<Vec<MeasureFlow>> {
    use rayon::prelude::*;
    noises
        .par_iter()
        .enumerate()
        .map(|(s, b)| {
            simulate_particles(
                spec,
                &Feedback(policy),
                b,
                m,
                scenario_particle_seed(seed, s),
                Some(s),
            )
        })
        .collect()
}

/// Keeps a seeded subset of ⌊λM⌉ particle indices from `new` and the rest
/// from `old`; the same subset is used in every frame.
pub fn mix_flows(
    old: &MeasureFlow,
    new: &MeasureFlow,
    lambda: f64,
    seed: u64,
    tag: u64,
) -> Result<MeasureFlow> {
    if lambda >= 1.0 {
        return Ok(new.clone());
    }
    let m = old.frame(0).len();
    let take = ((lambda * m as f64).round() as usize).min(m);
    let mut idx: Vec<usize> = (0..m).collect();
    let mut rng = stream(seed, Domain::Mixing, &[tag]);
    use rand::Rng;
    for i in 0..take {
        let j = rng.random_range(i..m);
        idx.swap(i, j);
    }
    let mut from_new = vec![false; m];
    for &i in &idx[..take] {
        from_new[i] = true;
    }
    let frames = old
        .frames()
        .iter()
        .zip(new.frames())
        .map(|(fo, fnew)| {
            let (n, q) = (fo.n(), fo.q());
            let mut xs = Vec::with_capacity(m * n);
            let mut us = Vec::with_capacity(m * q);
            for (a, &pick) in from_new.iter().enumerate() {
                let src = if pick { fnew } else { fo };
                xs.extend_from_slice(&src.state(a));
                us.extend_from_slice(src.control(a));
            }
            Ensemble::uniform(fo.time(), n, q, xs, us)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(old.grid().clone(), frames)
}

fn ensemble_of(noises: &[NoisePath], flows: Vec<MeasureFlow>) -> Result<ScenarioEnsemble> {
    ScenarioEnsemble::new(
        noises
            .iter()
            .cloned()
            .zip(flows)
            .map(|(noise, flow)| Scenario { noise, flow })
            .collect(),
    )
}

/// Damped Picard iteration: flows → best response → simulate → mix.
pub fn mfg_fixed_point(spec: &ModelSpec, cfg: &FixedPointConfig) -> Result<EquilibriumSolution> {
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(domain("damping must lie in (0, 1]"));
    }
    if !(cfg.tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    if cfg.scenarios == 0 {
        return Err(domain("need at least one scenario"));
    }
    let grid = spec.grid(cfg.steps)?;
    let noises: Vec<NoisePath> = (0..cfg.scenarios)
        .map(|s| scenario_noise(&grid, spec.n, cfg.seed, s))
        .collect();
    let zero = spec.controls.nearest(&vec![0.0; spec.q]);
    let mut policy = MfgPolicy::Constant { index: zero };
    let mut flows = simulate_all(spec, &policy, &noises, cfg.particles, cfg.seed)?;
    let mut simulated = flows.clone();
    let mut trace = Vec::new();
    let mut best: Option<(f64, MfgPolicy, Vec<MeasureFlow>, Vec<MeasureFlow>)> = None;
    let mut converged = false;
    let mut extrapolated = 0;

    for it in 0..cfg.max_iter {
        let frozen = ensemble_of(&noises, flows.clone())?;
        let br = best_response_dp(spec, &frozen, &cfg.dp)?;
        extrapolated = br.extrapolated;
        let new_policy = br.policy;
        let new_sim = simulate_all(spec, &new_policy, &noises, cfg.particles, cfg.seed)?;
        let mixed = flows
            .iter()
            .zip(&new_sim)
            .map(|(o, n)| mix_flows(o, n, cfg.damping, cfg.seed, it as u64))
            .collect::<Result<Vec<_>>>()?;
        let d = flows
            .iter()
            .zip(&mixed)
            .map(|(a, b)| flow_distance(a, b, spec.p))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        trace.push(d);
        policy = new_policy;
        flows = mixed;
        simulated = new_sim;
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, policy.clone(), flows.clone(), simulated.clone()));
        }
        if d < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        if let Some((_, p, f, s)) = best {
            policy = p;
            flows = f;
            simulated = s;
        }
    }

    let frozen = ensemble_of(&noises, flows)?;
    let br = best_response_dp(spec, &frozen, &cfg.dp)?;
    let own = evaluate_policy_dp(spec, &frozen, &policy, &cfg.dp)?;
    let diffs: Vec<f64> = br
        .per_scenario
        .iter()
        .zip(&own)
        .map(|(a, b)| a - b)
        .collect();
    let mc: Vec<f64> = simulated
        .iter()
        .map(|f| crate::stats::mean(&particle_rewards(spec, f)))
        .collect();
    Ok(EquilibriumSolution {
        policy,
        scenarios: frozen,
        epsilon: Estimate::from_samples(&diffs),
        value: Estimate::from_samples(&own),
        mc_value: Estimate::from_samples(&mc),
        best_response_value: br.value,
        iterations: trace.len(),
        trace,
        converged,
        extrapolated: extrapolated.max(br.extrapolated),
    })
}

/// Realized controls and states of one scenario under a feedback: the
/// open-loop view of a closed-loop equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRecord {
    pub scenario: usize,
    pub particles: usize,
    /// `controls[k][a]` is the control index of particle `a` at step `k`.
    pub controls: Vec<Vec<usize>>,
    pub states: Vec<Vec<f64>>,
}

impl ControlRecord {
    /// Control index per particle at each step, usable as a particle control.
    pub fn as_control(&self) -> RecordedControl<'_> {
        RecordedControl(self)
    }
}

pub struct RecordedControl<'a>(&'a ControlRecord);

impl ParticleControl for RecordedControl<'_> {
    fn control_index(
        &self,
        step: usize,
        _: f64,
        particle: usize,
        _: &[f64],
        _: &MeasureFeatures,
        _: &PathFeatures<'_>,
    ) -> usize {
        self.0.controls[step][particle]
    }
}

/// Simulates scenario `scenario` under `policy` and records the emitted
/// controls; replaying the record with the same seed reproduces the states.
pub fn strong_to_openloop_view(
    spec: &ModelSpec,
    policy: &dyn MarkovPolicy,
    noise: &NoisePath,
    scenario: usize,
    particles: usize,
    seed: u64,
) -> Result<ControlRecord> {
    let flow = simulate_particles(
        spec,
        &Feedback(policy),
        noise,
        particles,
        seed,
        Some(scenario),
    )?;
    let controls = flow
        .frames()
        .iter()
        .map(|f| {
            (0..f.len())
                .map(|a| {
                    spec.controls
                        .index_of(f.control(a))
                        .expect("simulated control lies on the grid")
                })
                .collect()
        })
        .collect();
    let states = flow
        .frames()
        .iter()
        .map(|f| f.state_coordinate(0))
        .collect();
    Ok(ControlRecord {
        scenario,
        particles,
        controls,
        states,
    })
}
