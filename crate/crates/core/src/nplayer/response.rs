//! Best responses, Nash gaps and Pareto values estimated by Monte Carlo
//! with common random numbers.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{solve, Mode};
use crate::error::{domain, Result};
use crate::interp::Axis;
use crate::model::{ModelSpec, NoisePath, TimeGrid};
use crate::policy::{FeedbackTable, MeasureFeatures};
use crate::rng::{derive_seed, Domain};
use crate::stats::Estimate;

use super::{
    player_costs, simulate_game, GamePolicy, GameTrajectory, NPlayerPolicySet, PlayerEnvironment,
};

/// Tabulated (t, x, mean of the others) feedback class searched by
/// [`best_response`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseClass {
    pub x_count: usize,
    pub m_count: usize,
    pub x_range: Option<(f64, f64)>,
    /// Game paths used to build the player's environment in each sweep.
    pub base_paths: usize,
    pub sweeps: usize,
}

impl Default for ResponseClass {
    fn default() -> Self {
        ResponseClass {
            x_count: 61,
            m_count: 9,
            x_range: None,
            base_paths: 32,
            sweeps: 2,
        }
    }
}

/// Table policy reading the player's own state and the mean of the others.
#[derive(Debug, Clone)]
pub struct DeviationPolicy {
    pub table: FeedbackTable,
    pub players: usize,
}

impl GamePolicy for DeviationPolicy {
    fn control_index(
        &self,
        _: usize,
        t: f64,
        player: usize,
        states: &[f64],
        f: &MeasureFeatures,
    ) -> usize {
        let x = states[player];
        let m = if self.players > 1 {
            let nn = self.players as f64;
            (f.mean[0] * nn - x) / (nn - 1.0)
        } else {
            0.0
        };
        self.table
            .controls
            .nearest(&self.table.raw_control(t, x, m))
    }
}

/// Common noise of game path `path`; equals the mean field scenario noise
/// of the same index and seed.
pub fn game_noise(grid: &TimeGrid, n: usize, seed: u64, path: usize) -> NoisePath {
    NoisePath::sample(grid, n, seed, path as u64)
}

/// Rewards of every player on `paths` game paths, in path order.
fn path_costs(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let tr = simulate_game(spec, set, game_noise(grid, spec.n, seed, p), seed, p as u64)?;
            Ok(player_costs(spec, &tr))
        })
        .collect()
}

fn trajectories(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<Vec<GameTrajectory>> {
    (0..paths)
        .into_par_iter()
        .map(|p| simulate_game(spec, set, game_noise(grid, spec.n, seed, p), seed, p as u64))
        .collect()
}

fn state_axis(base: &[GameTrajectory], count: usize) -> Result<Axis> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let kk = base[0].grid.steps();
    for k in 0..=kk {
        let all: Vec<f64> = base
            .iter()
            .flat_map(|tr| tr.states[k].iter().copied())
            .collect();
        let m = crate::stats::mean(&all);
        let sd = crate::stats::variance(&all).sqrt();
        lo = lo.min(m - 6.0 * sd);
        hi = hi.max(m + 6.0 * sd);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    Axis::new(lo, hi, count)
}

#[derive(Debug, Clone)]
pub struct BestResponseReport {
    pub player: usize,
    pub policy: Arc<dyn GamePolicy>,
    /// The best table found, `None` when no candidate beat the original.
    pub table: Option<FeedbackTable>,
    pub value: Estimate,
    pub baseline: Estimate,
    /// Paired difference value − baseline on common paths.
    pub gain: Estimate,
    /// Best value so far after each sweep.
    pub trace: Vec<f64>,
    /// The last sweep still improved, so more sweeps might help.
    pub budget_exhausted: bool,
    pub extrapolated: usize,
}

/// Approximate sup over the table class of player `i`'s reward, others
/// fixed. Each sweep simulates base paths under the current profile, solves
/// the player's dynamic program against them and keeps the candidate if its
/// Monte Carlo value (same paths and seeds for every candidate) improves.
pub fn best_response(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    i: usize,
    class: &ResponseClass,
    grid: &TimeGrid,
    mc_paths: usize,
    seed: u64,
) -> Result<BestResponseReport> {
    let big_n = set.players();
    if i >= big_n {
        return Err(domain(format!(
            "player {i} out of range for {big_n} players"
        )));
    }
    if mc_paths == 0 || class.base_paths == 0 {
        return Err(domain("need at least one Monte Carlo path"));
    }
    let baseline_samples: Vec<f64> = path_costs(spec, set, grid, mc_paths, seed)?
        .into_iter()
        .map(|c| c[i])
        .collect();
    let baseline = Estimate::from_samples(&baseline_samples);
    let mut best_samples = baseline_samples.clone();
    let mut best_policy = set.policy(i).clone();
    let mut best_table = None;
    let mut current = set.clone();
    let mut trace = Vec::new();
    let mut improved_last = false;
    let mut extrapolated = 0;
    for sweep in 0..class.sweeps {
        let base_seed = derive_seed(seed, &[Domain::Agent as u64, sweep as u64]);
        let base = trajectories(spec, &current, grid, class.base_paths, base_seed)?;
        let env = PlayerEnvironment::new(spec, i, &base, class.m_count)?;
        let x_axis = match class.x_range {
            Some((lo, hi)) => Axis::new(lo, hi, class.x_count)?,
            None => state_axis(&base, class.x_count)?,
        };
        let sol = solve(spec, &env, x_axis, Mode::Optimize, None)?;
        extrapolated += sol.extrapolated;
        let cand = DeviationPolicy {
            table: sol.table,
            players: big_n,
        };
        let cand_set = set.with_player(i, Arc::new(cand.clone()));
        let samples: Vec<f64> = path_costs(spec, &cand_set, grid, mc_paths, seed)?
            .into_iter()
            .map(|c| c[i])
            .collect();
        improved_last = crate::stats::mean(&samples) > crate::stats::mean(&best_samples);
        if improved_last {
            best_samples = samples;
            best_policy = Arc::new(cand.clone());
            best_table = Some(cand.table);
            current = cand_set;
        }
        trace.push(crate::stats::mean(&best_samples));
    }
    let diffs: Vec<f64> = best_samples
        .iter()
        .zip(&baseline_samples)
        .map(|(a, b)| a - b)
        .collect();
    Ok(BestResponseReport {
        player: i,
        policy: best_policy,
        table: best_table,
        value: Estimate::from_samples(&best_samples),
        baseline,
        gain: Estimate::from_samples(&diffs),
        trace,
        budget_exhausted: improved_last && class.sweeps > 1,
        extrapolated,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PlayerGap {
    pub player: usize,
    pub gap: Estimate,
    pub value: Estimate,
    pub baseline: Estimate,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NashGapReport {
    pub players: usize,
    /// Gaps of the players actually examined; for a symmetric set only
    /// player 0, which stands for all of them.
    pub gaps: Vec<PlayerGap>,
    pub symmetric: bool,
    pub max_gap: f64,
    pub mean_gap: f64,
}

/// ε_i = best-response value − J_i(α) for each player. Symmetric sets are
/// exchangeable, so only player 0 is examined.
pub fn nash_gap(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    class: &ResponseClass,
    grid: &TimeGrid,
    mc_paths: usize,
    seed: u64,
) -> Result<NashGapReport> {
    let who: Vec<usize> = if set.is_symmetric() {
        vec![0]
    } else {
        (0..set.players()).collect()
    };
    let gaps = who
        .into_iter()
        .map(|i| {
            let r = best_response(spec, set, i, class, grid, mc_paths, seed)?;
            Ok(PlayerGap {
                player: i,
                gap: r.gain,
                value: r.value,
                baseline: r.baseline,
                budget_exhausted: r.budget_exhausted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_gap = gaps
        .iter()
        .map(|g| g.gap.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let mean_gap = gaps.iter().map(|g| g.gap.mean).sum::<f64>() / gaps.len() as f64;
    Ok(NashGapReport {
        players: set.players(),
        gaps,
        symmetric: set.is_symmetric(),
        max_gap,
        mean_gap,
    })
}

/// Average reward (1/N) Σ_i J_i over `mc_paths` paths.
pub fn pareto_value(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    grid: &TimeGrid,
    mc_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    if mc_paths == 0 {
        return Err(domain("need at least one Monte Carlo path"));
    }
    let per: Vec<f64> = path_costs(spec, set, grid, mc_paths, seed)?
        .iter()
        .map(|c| crate::stats::mean(c))
        .collect();
    Ok(Estimate::from_samples(&per))
}
