//! The N-player closed-loop game: simulation, costs, best responses and
//! Nash / Pareto gap estimates.

mod env;
mod response;

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::measures::{Ensemble, MeasureFlow};
use crate::model::{ModelSpec, NoisePath, TimeGrid};
use crate::policy::{MarkovPolicy, MeasureFeatures};
use crate::rng::{normal, stream, Domain};

pub use env::PlayerEnvironment;
pub use response::{
    best_response, game_noise, nash_gap, pareto_value, BestResponseReport, DeviationPolicy,
    NashGapReport, PlayerGap, ResponseClass,
};

/// Closed-loop policy of one player: reads every player's current state.
pub trait GamePolicy: Send + Sync + fmt::Debug {
    /// `states` holds all N states in player order (N × n); `features`
    /// summarize their empirical measure.
    fn control_index(
        &self,
        step: usize,
        t: f64,
        player: usize,
        states: &[f64],
        features: &MeasureFeatures,
    ) -> usize;
}

/// A mean field feedback applied to the player's own state and the
/// empirical state measure.
#[derive(Debug, Clone)]
pub struct Lifted(pub Arc<dyn MarkovPolicy>);

impl GamePolicy for Lifted {
    fn control_index(
        &self,
        step: usize,
        t: f64,
        player: usize,
        states: &[f64],
        f: &MeasureFeatures,
    ) -> usize {
        let n = f.mean.len();
        self.0
            .control_index(step, t, &states[player * n..(player + 1) * n], f)
    }
}

type GameFn = dyn Fn(usize, f64, usize, &[f64], &MeasureFeatures) -> usize + Send + Sync;

/// Game policy backed by a closure.
#[derive(Clone)]
pub struct FnGamePolicy(Arc<GameFn>);

impl FnGamePolicy {
    pub fn new(
        f: impl Fn(usize, f64, usize, &[f64], &MeasureFeatures) -> usize + Send + Sync + 'static,
    ) -> Self {
        FnGamePolicy(Arc::new(f))
    }
}

impl fmt::Debug for FnGamePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnGamePolicy")
    }
}

impl GamePolicy for FnGamePolicy {
    fn control_index(
        &self,
        step: usize,
        t: f64,
        player: usize,
        states: &[f64],
        f: &MeasureFeatures,
    ) -> usize {
        (self.0)(step, t, player, states, f)
    }
}

/// One policy per player.
#[derive(Debug, Clone)]
pub struct NPlayerPolicySet {
    policies: Vec<Arc<dyn GamePolicy>>,
    symmetric: bool,
}

impl NPlayerPolicySet {
    pub fn new(policies: Vec<Arc<dyn GamePolicy>>) -> Result<Self> {
        if policies.is_empty() {
            return Err(domain("need at least one player"));
        }
        Ok(NPlayerPolicySet {
            policies,
            symmetric: false,
        })
    }

    /// Every player uses the same policy (which must treat players alike).
    pub fn symmetric(policy: Arc<dyn GamePolicy>, players: usize) -> Result<Self> {
        if players == 0 {
            return Err(domain("need at least one player"));
        }
        Ok(NPlayerPolicySet {
            policies: vec![policy; players],
            symmetric: true,
        })
    }

    pub fn players(&self) -> usize {
        self.policies.len()
    }

    pub fn policy(&self, i: usize) -> &Arc<dyn GamePolicy> {
        &self.policies[i]
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Same set with player `i` switched to `policy`.
    pub fn with_player(&self, i: usize, policy: Arc<dyn GamePolicy>) -> NPlayerPolicySet {
        let mut policies = self.policies.clone();
        policies[i] = policy;
        NPlayerPolicySet {
            policies,
            symmetric: false,
        }
    }
}

/// Randomness of one game path: initial states, idiosyncratic increments
/// and the common noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInputs {
    pub players: usize,
    /// N × n initial states.
    pub xi: Vec<f64>,
    /// `dw[i]` holds player i's increments, K × n, already scaled by √Δt.
    pub dw: Vec<Vec<f64>>,
    pub noise: NoisePath,
}

impl GameInputs {
    /// Player i draws ξ^i then its increments from its own stream
    /// `(seed, path, i)`, so no player's noise depends on anyone's policy.
    pub fn sample(
        spec: &ModelSpec,
        noise: NoisePath,
        players: usize,
        seed: u64,
        path: u64,
    ) -> Self {
        let n = spec.n;
        let kk = noise.grid().steps();
        let sdt = noise.grid().dt().sqrt();
        let mut xi = vec![0.0; players * n];
        let dw = (0..players)
            .map(|i| {
                let mut rng = stream(seed, Domain::Player, &[path, i as u64]);
                spec.initial.sample(&mut rng, &mut xi[i * n..(i + 1) * n]);
                (0..kk * n).map(|_| sdt * normal(&mut rng)).collect()
            })
            .collect();
        GameInputs {
            players,
            xi,
            dw,
            noise,
        }
    }

    /// Inputs with player `perm[i]` receiving the data of player `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.xi.len() / self.players;
        let mut xi = vec![0.0; self.xi.len()];
        let mut dw = vec![Vec::new(); self.players];
        for (i, &p) in perm.iter().enumerate() {
            xi[p * n..(p + 1) * n].copy_from_slice(&self.xi[i * n..(i + 1) * n]);
            dw[p] = self.dw[i].clone();
        }
        GameInputs {
            players: self.players,
            xi,
            dw,
            noise: self.noise.clone(),
        }
    }
}

/// One realized path of the game.
#[derive(Debug, Clone)]
pub struct GameTrajectory {
    pub grid: TimeGrid,
    pub players: usize,
    pub n: usize,
    /// `states[k]` holds the N × n states at node k in player order.
    pub states: Vec<Vec<f64>>,
    /// `controls[k][i]` is player i's control index at node k.
    pub controls: Vec<Vec<usize>>,
    /// Empirical joint measures φ̄^N_k, atoms in canonical (sorted) order.
    pub frames: Vec<Ensemble>,
    pub inputs: GameInputs,
}

impl GameTrajectory {
    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        &self.states[k][i * self.n..(i + 1) * self.n]
    }

    /// φ̄^N as a measure flow.
    pub fn empirical_flow(&self) -> Result<MeasureFlow> {
        MeasureFlow::new(self.grid.clone(), self.frames.clone())
    }

    /// φ^N, the state marginals.
    pub fn state_flow(&self) -> Result<MeasureFlow> {
        MeasureFlow::new(
            self.grid.clone(),
            self.frames.iter().map(|f| f.state_marginal()).collect(),
        )
    }
}

/// Empirical measure of (states, controls) with atoms sorted by state then
/// control, so that it depends on the multiset of players only.
pub(crate) fn canonical_frame(
    t: f64,
    n: usize,
    q: usize,
    states: &[f64],
    controls: &[f64],
) -> Result<Ensemble> {
    let len = states.len() / n;
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        let sa = &states[a * n..(a + 1) * n];
        let sb = &states[b * n..(b + 1) * n];
        let ua = &controls[a * q..(a + 1) * q];
        let ub = &controls[b * q..(b + 1) * q];
        sa.iter()
            .zip(sb)
            .chain(ua.iter().zip(ub))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let xs = order
        .iter()
        .flat_map(|&a| states[a * n..(a + 1) * n].iter().copied())
        .collect();
    let us = order
        .iter()
        .flat_map(|&a| controls[a * q..(a + 1) * q].iter().copied())
        .collect();
    Ensemble::uniform(t, n, q, xs, us)
}

/// Simulates one game path with fresh inputs for `(seed, path)`.
pub fn simulate_game(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    noise: NoisePath,
    seed: u64,
    path: u64,
) -> Result<GameTrajectory> {
    let inputs = GameInputs::sample(spec, noise, set.players(), seed, path);
    simulate_game_with_inputs(spec, set, inputs)
}

/// Euler–Maruyama for the N-player system. At each node every player reads
/// the current states, then all controls enter the same-step empirical
/// measure used by the drift and costs.
pub fn simulate_game_with_inputs(
    spec: &ModelSpec,
    set: &NPlayerPolicySet,
    inputs: GameInputs,
) -> Result<GameTrajectory> {
    spec.check_shape()?;
    let big_n = set.players();
    if inputs.players != big_n {
        return Err(domain(format!(
            "inputs for {} players, policy set has {big_n}",
            inputs.players
        )));
    }
    if inputs.noise.dim() != spec.n {
        return Err(domain("noise path dimension differs from state dimension"));
    }
    let (n, q) = (spec.n, spec.q);
    let grid = inputs.noise.grid().clone();
    let kk = grid.steps();
    let dt = grid.dt();
    let mut xs = inputs.xi.clone();
    let mut states = Vec::with_capacity(kk + 1);
    let mut controls = Vec::with_capacity(kk + 1);
    let mut frames = Vec::with_capacity(kk + 1);
    let mut sig = vec![0.0; n * n];
    let mut bstar = vec![0.0; n];
    let mut bc = vec![0.0; n];
    let mut nf = vec![0.0; n];

    for k in 0..=kk {
        let t = grid.time(k);
        let features = MeasureFeatures::of_points(&xs, n);
        let idx: Vec<usize> = (0..big_n)
            .map(|i| set.policy(i).control_index(k, t, i, &xs, &features))
            .collect();
        let mut us = vec![0.0; big_n * q];
        for (i, &c) in idx.iter().enumerate() {
            if c >= spec.controls.len() {
                return Err(domain(format!(
                    "player {i} chose control index {c} outside the grid"
                )));
            }
            us[i * q..(i + 1) * q].copy_from_slice(spec.controls.point(c));
        }
        let frame = canonical_frame(t, n, q, &xs, &us)?;
        states.push(xs.clone());
        controls.push(idx);
        if k == kk {
            frames.push(frame);
            break;
        }
        (spec.b_star)(t, &frame, &mut bstar);
        if let Some(fb) = &spec.noise_feedback {
            let node = (k / fb.stride) * fb.stride;
            (fb.drift)(t, inputs.noise.value(node), &mut nf);
            for d in 0..n {
                bstar[d] += nf[d];
            }
        }
        let common: Vec<f64> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| spec.sigma0[r * n + c] * inputs.noise.increment(k, c))
                    .sum()
            })
            .collect();
        for i in 0..big_n {
            let x = &xs[i * n..(i + 1) * n];
            (spec.b_circ)(t, x, &us[i * q..(i + 1) * q], &mut bc);
            (spec.sigma)(t, x, &mut sig);
            let dw = &inputs.dw[i][k * n..(k + 1) * n];
            let mut next = vec![0.0; n];
            for r in 0..n {
                let diff: f64 = (0..n).map(|c| sig[r * n + c] * dw[c]).sum();
                let v = x[r] + (bstar[r] + bc[r]) * dt + diff + common[r];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        step: k,
                        who: format!("player {i}"),
                    });
                }
                next[r] = v;
            }
            xs[i * n..(i + 1) * n].copy_from_slice(&next);
        }
        frames.push(frame);
    }
    Ok(GameTrajectory {
        grid,
        players: big_n,
        n,
        states,
        controls,
        frames,
        inputs,
    })
}

/// Realized reward of player `i` on one path: left-endpoint sum of
/// L(t_k, X^i_k, φ̄^N_k, α^i_k) Δt plus g(X^i_T, φ^N_T).
pub fn player_cost(spec: &ModelSpec, traj: &GameTrajectory, i: usize) -> Result<f64> {
    if i >= traj.players {
        return Err(domain(format!(
            "player {i} out of range for {} players",
            traj.players
        )));
    }
    let dt = traj.grid.dt();
    let kk = traj.grid.steps();
    let mut acc = 0.0;
    for k in 0..kk {
        let t = traj.grid.time(k);
        let f = &traj.frames[k];
        let x = traj.state(k, i);
        let u = spec.controls.point(traj.controls[k][i]);
        acc += dt * ((spec.l_star)(t, x, f) + (spec.l_circ)(t, x, &f.state_marginal(), u));
    }
    let last = traj.frames[kk].state_marginal();
    Ok(acc + (spec.g)(traj.state(kk, i), &last))
}

/// Rewards of all players on one path.
pub fn player_costs(spec: &ModelSpec, traj: &GameTrajectory) -> Vec<f64> {
    let dt = traj.grid.dt();
    let kk = traj.grid.steps();
    let mut out = vec![0.0; traj.players];
    for k in 0..kk {
        let t = traj.grid.time(k);
        let f = &traj.frames[k];
        let marginal = f.state_marginal();
        for (i, o) in out.iter_mut().enumerate() {
            let x = traj.state(k, i);
            let u = spec.controls.point(traj.controls[k][i]);
            *o += dt * ((spec.l_star)(t, x, f) + (spec.l_circ)(t, x, &marginal, u));
        }
    }
    let last = traj.frames[kk].state_marginal();
    for (i, o) in out.iter_mut().enumerate() {
        *o += (spec.g)(traj.state(kk, i), &last);
    }
    out
}

/// Every player applies β to its own state and the empirical measure.
/// Rejects policies that need a scenario index.
pub fn lift_policy(beta: Arc<dyn MarkovPolicy>, players: usize) -> Result<NPlayerPolicySet> {
    if beta.reads_scenario() {
        return Err(domain(
            "policy reads a scenario index and cannot be lifted to a finite game",
        ));
    }
    NPlayerPolicySet::symmetric(Arc::new(Lifted(beta)), players)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog::{lq1d, LqParams};
    use crate::model::ControlGrid;
    use crate::policy::ConstantPolicy;

    #[test]
    fn frozen_dynamics() {
        let u = ControlGrid::uniform_1d(0.0, 1.0, 2).unwrap();
        let spec = ModelSpec::new("t", 1, 1.0, u)
            .unwrap()
            .with_constant_sigma(vec![0.0])
            .with_sigma0(vec![0.0]);
        let set = lift_policy(Arc::new(ConstantPolicy(1)), 3).unwrap();
        let grid = spec.grid(10).unwrap();
        let tr = simulate_game(&spec, &set, NoisePath::zero(&grid, 1), 1, 0).unwrap();
        for k in 0..=10 {
            for i in 0..3 {
                assert_eq!(tr.state(k, i), &[0.0]);
            }
        }
    }

    #[test]
    fn constant_control_ode() {
        let u = ControlGrid::uniform_1d(0.0, 1.0, 2).unwrap();
        let spec = ModelSpec::new("t", 1, 1.0, u)
            .unwrap()
            .with_constant_sigma(vec![0.0])
            .with_sigma0(vec![0.0])
            .with_b_circ(|_, _, u, out| out[0] = u[0]);
        let set = lift_policy(Arc::new(ConstantPolicy(1)), 2).unwrap();
        let grid = spec.grid(8).unwrap();
        let tr = simulate_game(&spec, &set, NoisePath::zero(&grid, 1), 1, 0).unwrap();
        assert!((tr.state(8, 1)[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lq_hand_cost_is_zero() {
        let prm = LqParams {
            sigma: 0.0,
            ..Default::default()
        };
        let spec = lq1d(&prm)
            .unwrap()
            .with_sigma0(vec![0.0])
            .with_initial(crate::model::InitialLaw::Dirac(vec![1.0]));
        let zero = spec.controls.nearest(&[0.0]);
        let set = lift_policy(Arc::new(ConstantPolicy(zero)), 3).unwrap();
        let grid = spec.grid(10).unwrap();
        let tr = simulate_game(&spec, &set, NoisePath::zero(&grid, 1), 1, 0).unwrap();
        // x_t = e^{κ t} for everyone, so x − c·m = 0 along the path
        for i in 0..3 {
            assert!(player_cost(&spec, &tr, i).unwrap().abs() < 1e-12);
        }
        assert!(player_cost(&spec, &tr, 3).is_err());
    }

    #[test]
    fn scenario_policies_are_not_liftable() {
        let p = crate::policy::FnPolicy::new(|_, _, _, _| 0).scenario_dependent();
        assert!(lift_policy(Arc::new(p), 4).is_err());
    }
}
