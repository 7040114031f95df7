//! Mean field control: closed-loop and open-loop values found by pattern
//! search over tabulated policies, their comparison, the Pareto curve of
//! the N-player game and propagation-of-chaos distances.

mod search;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::interp::Axis;
use crate::measures::wasserstein_1d;
use crate::mfg::{
    particle_rewards, scenario_noise, scenario_particle_seed, simulate_conditional_mkv,
    simulate_particles, Feedback, ParticleControl, PathFeatures,
};
use crate::model::{ControlGrid, InitialLaw, ModelSpec, NoisePath, TimeGrid};
use crate::nplayer::{game_noise, lift_policy, pareto_value, simulate_game};
use crate::policy::{FeedbackTable, MarkovPolicy, MeasureFeatures};
use crate::rng::{derive_seed, Domain};
use crate::stats::Estimate;

pub use search::{pattern_search, pattern_search_directions, SearchOutcome, SearchSettings};

/// Table sizes, Monte Carlo sizes and optimizer settings for the control
/// problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfcBudget {
    /// Scenarios and particles used inside the optimizer (common to all
    /// candidates).
    pub scenarios: usize,
    pub particles: usize,
    /// Fresh scenarios and particles for the reported value.
    pub eval_scenarios: usize,
    pub eval_particles: usize,
    pub steps: usize,
    /// Time nodes of the tables (linear interpolation in between).
    pub time_nodes: usize,
    /// Nodes per feature axis (state, mean; or ξ, Z^W, Z^B).
    pub feature_nodes: usize,
    /// Mean-reversion rate of the open-loop path filters.
    pub filter_rate: f64,
    pub search: SearchSettings,
}

impl Default for MfcBudget {
    fn default() -> Self {
        MfcBudget {
            scenarios: 8,
            particles: 1000,
            eval_scenarios: 32,
            eval_particles: 2000,
            steps: 100,
            time_nodes: 5,
            feature_nodes: 2,
            filter_rate: 1.0,
            search: SearchSettings::default(),
        }
    }
}

/// Open-loop table over (t, ξ, Z^W, Z^B) where Z are exponentially filtered
/// idiosyncratic and common increments up to the previous step.
#[derive(Debug, Clone, Serialize)]
pub struct OpenLoopTable {
    pub times: Vec<f64>,
    /// Axes for ξ, Z^W and Z^B.
    pub axes: [Axis; 3],
    pub rate: f64,
    #[serde(skip)]
    pub controls: ControlGrid,
    /// Indexed `[k][a][b][c][d]`, flattened.
    pub values: Vec<f64>,
}

impl OpenLoopTable {
    fn cells_per_time(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    fn node_value(&self, k: usize, point: [f64; 3], d: usize) -> f64 {
        let q = self.controls.dim();
        let base = k * self.cells_per_time();
        let locs: Vec<_> = self
            .axes
            .iter()
            .zip(point)
            .map(|(a, v)| a.locate(v))
            .collect();
        let mut acc = 0.0;
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut idx = 0;
            for (ax, (a, l)) in self.axes.iter().zip(&locs).enumerate() {
                let bit = (corner >> ax) & 1;
                if a.count == 1 {
                    if bit == 1 {
                        w = 0.0;
                    }
                    continue;
                }
                w *= if bit == 1 { l.frac } else { 1.0 - l.frac };
                idx = idx * a.count + l.cell + bit;
            }
            if w != 0.0 {
                acc += w * self.values[(base + idx) * q + d];
            }
        }
        acc
    }

    pub fn raw_control(&self, t: f64, point: [f64; 3]) -> Vec<f64> {
        let q = self.controls.dim();
        let last = self.times.len() - 1;
        let pos = self.times.partition_point(|s| *s <= t);
        let (k, w) = if pos == 0 {
            (0, 0.0)
        } else if pos > last || self.times[pos - 1] == t {
            (pos - 1, 0.0)
        } else {
            let k = pos - 1;
            (k, (t - self.times[k]) / (self.times[k + 1] - self.times[k]))
        };
        (0..q)
            .map(|d| {
                let a = self.node_value(k, point, d);
                if w == 0.0 {
                    a
                } else {
                    (1.0 - w) * a + w * self.node_value(k + 1, point, d)
                }
            })
            .collect()
    }
}

impl ParticleControl for OpenLoopTable {
    fn control_index(
        &self,
        _: usize,
        t: f64,
        _: usize,
        _: &[f64],
        _: &MeasureFeatures,
        path: &PathFeatures<'_>,
    ) -> usize {
        self.controls
            .nearest(&self.raw_control(t, [path.xi[0], path.zw[0], path.zb[0]]))
    }

    fn filter_rate(&self) -> Option<f64> {
        Some(self.rate)
    }
}

/// Either kind of optimized policy.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlPolicy {
    ClosedLoop(FeedbackTable),
    OpenLoop(OpenLoopTable),
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueReport {
    /// Value on fresh scenarios and particles.
    pub value: Estimate,
    /// Objective on the optimizer's common random numbers.
    pub search_value: f64,
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub policy: ControlPolicy,
}

struct Sample {
    noises: Vec<NoisePath>,
    seeds: Vec<u64>,
    particles: usize,
}

impl Sample {
    fn new(
        spec: &ModelSpec,
        grid: &TimeGrid,
        scenarios: usize,
        particles: usize,
        seed: u64,
    ) -> Self {
        let noises = (0..scenarios)
            .map(|s| scenario_noise(grid, spec.n, seed, s))
            .collect();
        let seeds = (0..scenarios)
            .map(|s| scenario_particle_seed(seed, s))
            .collect();
        Sample {
            noises,
            seeds,
            particles,
        }
    }

    /// Mean reward per scenario.
    fn values(&self, spec: &ModelSpec, control: &dyn ParticleControl) -> Result<Vec<f64>> {
        self.noises
            .par_iter()
            .zip(&self.seeds)
            .map(|(b, &s)| {
                let flow = simulate_particles(spec, control, b, self.particles, s, None)?;
                Ok(crate::stats::mean(&particle_rewards(spec, &flow)))
            })
            .collect()
    }
}

fn table_times(horizon: f64, nodes: usize) -> Result<Vec<f64>> {
    if nodes < 2 {
        return Err(domain("tables need at least two time nodes"));
    }
    Ok((0..nodes)
        .map(|i| {
            if i + 1 == nodes {
                horizon
            } else {
                horizon * i as f64 / (nodes - 1) as f64
            }
        })
        .collect())
}

fn control_bounds(controls: &ControlGrid) -> (f64, f64) {
    let pts = (0..controls.len()).map(|i| controls.point(i)[0]);
    pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Box for table values: the control range widened threefold about its
/// centre. Interpolated values are projected onto the grid, so node values
/// beyond the range let a coarse table carry steep feedbacks.
fn search_bounds(controls: &ControlGrid) -> (f64, f64) {
    let (lo, hi) = control_bounds(controls);
    let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    (c - 3.0 * h, c + 3.0 * h)
}

fn optimizer_seeds(seed: u64) -> (u64, u64) {
    (
        derive_seed(seed, &[Domain::Validation as u64, 1]),
        derive_seed(seed, &[Domain::Validation as u64, 2]),
    )
}

fn check_budget(spec: &ModelSpec, b: &MfcBudget) -> Result<()> {
    if spec.n != 1 || spec.q != 1 {
        return Err(domain(
            "control tables support one-dimensional states and controls",
        ));
    }
    if b.scenarios == 0 || b.eval_scenarios == 0 || b.feature_nodes == 0 {
        return Err(domain("budget sizes must be positive"));
    }
    Ok(())
}

/// Search directions for a table with `times` time nodes, each a grid over
/// `axes` (row-major, last axis fastest): for every axis with more than one
/// node a slope running from −1 to 1 across it, plus a constant, first
/// applied to all time nodes at once and then to each time node alone.
fn table_directions(times: usize, axes: &[Axis]) -> Vec<Vec<f64>> {
    let per: usize = axes.iter().map(|a| a.count).product();
    let mut shapes = vec![vec![1.0; per]];
    for (ax, a) in axes.iter().enumerate() {
        if a.count < 2 {
            continue;
        }
        let inner: usize = axes[ax + 1..].iter().map(|a| a.count).product();
        shapes.push(
            (0..per)
                .map(|c| 2.0 * ((c / inner) % a.count) as f64 / (a.count - 1) as f64 - 1.0)
                .collect(),
        );
    }
    let mut out = Vec::new();
    for shape in &shapes {
        out.push((0..times).flat_map(|_| shape.iter().copied()).collect());
    }
    for k in 0..times {
        for shape in &shapes {
            let mut d = vec![0.0; times * per];
            d[k * per..(k + 1) * per].copy_from_slice(shape);
            out.push(d);
        }
    }
    out
}

/// Axis spanning `values` with relative and absolute padding.
fn span_axis(lo: f64, hi: f64, pad: f64, count: usize) -> Result<Axis> {
    let (lo, hi) = (lo - pad, hi + pad);
    if count == 1 {
        return Ok(Axis::single(0.5 * (lo + hi)));
    }
    Axis::new(lo, hi, count)
}

/// Closed-loop value: pattern search over feedback tables in (t, x, m).
pub fn closed_loop_value(spec: &ModelSpec, budget: &MfcBudget, seed: u64) -> Result<ValueReport> {
    closed_loop_restricted(spec, budget, seed, None)
}

/// As [`closed_loop_value`] with the table frozen to a constant control
/// index when `fixed` is given (a deliberately crippled class).
pub fn closed_loop_restricted(
    spec: &ModelSpec,
    budget: &MfcBudget,
    seed: u64,
    fixed: Option<usize>,
) -> Result<ValueReport> {
    check_budget(spec, budget)?;
    let grid = spec.grid(budget.steps)?;
    let (opt_seed, eval_seed) = optimizer_seeds(seed);
    let sample = Sample::new(spec, &grid, budget.scenarios, budget.particles, opt_seed);
    let zero = spec.controls.nearest(&[0.0]);
    let start = fixed.unwrap_or(zero);

    // axes from a pilot run under the starting control
    let pilot = crate::policy::ConstantPolicy(start);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut mlo = f64::INFINITY;
    let mut mhi = f64::NEG_INFINITY;
    for (b, &s) in sample.noises.iter().zip(&sample.seeds) {
        let flow = simulate_conditional_mkv(spec, &pilot, b, sample.particles, s)?;
        for f in flow.frames() {
            let m = f.mean_state()[0];
            let sd = f.variance_state()[0].sqrt();
            lo = lo.min(m - 4.0 * sd);
            hi = hi.max(m + 4.0 * sd);
            mlo = mlo.min(m);
            mhi = mhi.max(m);
        }
    }
    let x_axis = span_axis(lo, hi, 0.5, budget.feature_nodes.max(2))?;
    let m_axis = span_axis(mlo, mhi, 0.5 * (mhi - mlo) + 0.5, budget.feature_nodes)?;
    let times = table_times(spec.horizon, budget.time_nodes)?;
    let directions = table_directions(times.len(), &[x_axis, m_axis]);
    let m_axes = vec![m_axis; times.len()];
    let base = FeedbackTable::constant(times, x_axis, m_axes, spec.controls.clone(), start)?;
    let (ulo, uhi) = search_bounds(&spec.controls);

    let eval = |params: &[f64]| -> Result<f64> {
        let mut t = base.clone();
        t.values.copy_from_slice(params);
        Ok(crate::stats::mean(&sample.values(spec, &Feedback(&t))?))
    };
    let outcome = if fixed.is_some() {
        let v = eval(&base.values)?;
        SearchOutcome {
            params: base.values.clone(),
            value: v,
            trace: vec![v],
            evaluations: 1,
            budget_exhausted: false,
        }
    } else {
        pattern_search_directions(
            base.values.clone(),
            (ulo, uhi),
            &directions,
            &budget.search,
            eval,
        )?
    };
    let mut table = base;
    table.values = outcome.params.clone();
    let fresh = Sample::new(
        spec,
        &grid,
        budget.eval_scenarios,
        budget.eval_particles,
        eval_seed,
    );
    let value = Estimate::from_samples(&fresh.values(spec, &Feedback(&table))?);
    Ok(ValueReport {
        value,
        search_value: outcome.value,
        trace: outcome.trace,
        evaluations: outcome.evaluations,
        budget_exhausted: outcome.budget_exhausted,
        policy: ControlPolicy::ClosedLoop(table),
    })
}

fn filter_sd(rate: f64, horizon: f64) -> f64 {
    if rate > 0.0 {
        ((1.0 - (-2.0 * rate * horizon).exp()) / (2.0 * rate)).sqrt()
    } else {
        horizon.sqrt()
    }
}

/// Open-loop value: pattern search over tables in (t, ξ, Z^W, Z^B).
pub fn open_loop_value(spec: &ModelSpec, budget: &MfcBudget, seed: u64) -> Result<ValueReport> {
    check_budget(spec, budget)?;
    if !(budget.filter_rate >= 0.0) {
        return Err(domain("filter rate must be nonnegative"));
    }
    let grid = spec.grid(budget.steps)?;
    let (opt_seed, eval_seed) = optimizer_seeds(seed);
    let sample = Sample::new(spec, &grid, budget.scenarios, budget.particles, opt_seed);
    let (xi_lo, xi_hi) = match &spec.initial {
        InitialLaw::Dirac(x) => (x[0], x[0]),
        InitialLaw::Normal { mean, sd } => (mean[0] - 3.0 * sd, mean[0] + 3.0 * sd),
        InitialLaw::Custom(_) => (-3.0, 3.0),
    };
    let z = 3.0 * filter_sd(budget.filter_rate, spec.horizon);
    let nodes = budget.feature_nodes;
    let xi_axis = if xi_hi > xi_lo {
        span_axis(xi_lo, xi_hi, 0.0, nodes)?
    } else {
        Axis::single(xi_lo)
    };
    let mut sig = [0.0];
    (spec.sigma)(0.0, &[xi_lo], &mut sig);
    let zw_axis = if sig[0] != 0.0 {
        span_axis(-z, z, 0.0, nodes)?
    } else {
        Axis::single(0.0)
    };
    let zb_axis = if !spec.sigma0_is_zero() {
        span_axis(-z, z, 0.0, nodes)?
    } else {
        Axis::single(0.0)
    };
    let times = table_times(spec.horizon, budget.time_nodes)?;
    let per_time = xi_axis.count * zw_axis.count * zb_axis.count;
    let zero = spec.controls.point(spec.controls.nearest(&[0.0]))[0];
    let base = OpenLoopTable {
        values: vec![zero; times.len() * per_time],
        times,
        axes: [xi_axis, zw_axis, zb_axis],
        rate: budget.filter_rate,
        controls: spec.controls.clone(),
    };
    let (ulo, uhi) = search_bounds(&spec.controls);
    let directions = table_directions(base.times.len(), &base.axes);
    let eval = |params: &[f64]| -> Result<f64> {
        let mut t = base.clone();
        t.values.copy_from_slice(params);
        Ok(crate::stats::mean(&sample.values(spec, &t)?))
    };
    let outcome = pattern_search_directions(
        base.values.clone(),
        (ulo, uhi),
        &directions,
        &budget.search,
        eval,
    )?;
    let mut table = base;
    table.values = outcome.params.clone();
    let fresh = Sample::new(
        spec,
        &grid,
        budget.eval_scenarios,
        budget.eval_particles,
        eval_seed,
    );
    let value = Estimate::from_samples(&fresh.values(spec, &table)?);
    Ok(ValueReport {
        value,
        search_value: outcome.value,
        trace: outcome.trace,
        evaluations: outcome.evaluations,
        budget_exhausted: outcome.budget_exhausted,
        policy: ControlPolicy::OpenLoop(table),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub closed: ValueReport,
    pub open: ValueReport,
    pub difference: f64,
    pub combined_se: f64,
    /// |V^c − V^o| ≤ max(rel_tol·|V^c|, 3·combined SE).
    pub within_tolerance: bool,
    pub rel_tol: f64,
}

/// Runs both optimizers with the same budget and compares the values.
pub fn equivalence_report(
    spec: &ModelSpec,
    budget: &MfcBudget,
    rel_tol: f64,
    seed: u64,
) -> Result<EquivalenceReport> {
    let closed = closed_loop_value(spec, budget, seed)?;
    let open = open_loop_value(spec, budget, seed)?;
    Ok(compare_values(closed, open, rel_tol))
}

pub fn compare_values(closed: ValueReport, open: ValueReport, rel_tol: f64) -> EquivalenceReport {
    let difference = closed.value.mean - open.value.mean;
    let combined_se = closed.value.combined_se(&open.value);
    let within_tolerance =
        difference.abs() <= (rel_tol * closed.value.mean.abs()).max(3.0 * combined_se);
    EquivalenceReport {
        closed,
        open,
        difference,
        combined_se,
        within_tolerance,
        rel_tol,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParetoPoint {
    pub players: usize,
    pub value: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParetoCurve {
    pub points: Vec<ParetoPoint>,
    pub mfc_value: Estimate,
}

/// Average reward (1/N) Σ J_i of the closed-loop optimum lifted to N
/// players, for each N in `players` (sorted ascending).
pub fn pareto_limit_experiment(
    spec: &ModelSpec,
    players: &[usize],
    closed: &ValueReport,
    steps: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<ParetoCurve> {
    if players.windows(2).any(|w| w[0] > w[1]) {
        return Err(domain("player counts must be sorted"));
    }
    let table = match &closed.policy {
        ControlPolicy::ClosedLoop(t) => t.clone(),
        ControlPolicy::OpenLoop(_) => {
            return Err(domain("only closed-loop policies can be lifted"))
        }
    };
    let grid = spec.grid(steps)?;
    let beta: Arc<dyn MarkovPolicy> = Arc::new(table);
    let points = players
        .iter()
        .map(|&n| {
            let set = lift_policy(beta.clone(), n)?;
            Ok(ParetoPoint {
                players: n,
                value: pareto_value(spec, &set, &grid, mc_paths, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParetoCurve {
        points,
        mfc_value: closed.value,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosPoint {
    pub players: usize,
    pub distance: Estimate,
}

/// E[W_1(φ^N_T, μ_T)] for the lifted policy, with μ_T simulated on the same
/// common noise as each game path.
pub fn chaos_distances(
    spec: &ModelSpec,
    policy: Arc<dyn MarkovPolicy>,
    players: &[usize],
    grid: &TimeGrid,
    paths: usize,
    particles: usize,
    seed: u64,
) -> Result<Vec<ChaosPoint>> {
    if spec.n != 1 {
        return Err(domain(
            "chaos distances use the exact one-dimensional metric",
        ));
    }
    let kk = grid.steps();
    let sets = players
        .iter()
        .map(|&n| lift_policy(policy.clone(), n))
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let b = game_noise(grid, spec.n, seed, p);
            let mu = simulate_conditional_mkv(
                spec,
                policy.as_ref(),
                &b,
                particles,
                scenario_particle_seed(seed, p),
            )?;
            let mu_t = mu.frame(kk).state_marginal();
            sets.iter()
                .map(|set| {
                    let tr = simulate_game(spec, set, b.clone(), seed, p as u64)?;
                    wasserstein_1d(&tr.frames[kk].state_marginal(), &mu_t, 1.0)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(players
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let d: Vec<f64> = per_path.iter().map(|row| row[i]).collect();
            ChaosPoint {
                players: n,
                distance: Estimate::from_samples(&d),
            }
        })
        .collect())
}
