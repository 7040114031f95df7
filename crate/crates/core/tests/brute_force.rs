//! Two-step, three-state, two-control instances solved by enumerating all
//! 2^6 Markov policies.

use std::sync::Arc;

use mfgc_core::measures::{Scenario, ScenarioEnsemble};
use mfgc_core::mfg::{best_response_dp, simulate_conditional_mkv, DpOptions, MfgPolicy};
use mfgc_core::model::{ControlGrid, InitialLaw, ModelSpec, NoisePath};
use mfgc_core::nplayer::{
    best_response, FnGamePolicy, GamePolicy, NPlayerPolicySet, ResponseClass,
};
use mfgc_core::policy::{ConstantPolicy, MarkovPolicy, MeasureFeatures};

// r[k][x][u], deliberately irregular so that no two policies tie
const R: [[[f64; 2]; 3]; 2] = [
    [[0.31, -0.17], [0.05, 0.42], [-0.23, 0.11]],
    [[-0.07, 0.29], [0.37, -0.13], [0.19, -0.41]],
];
const G: [f64; 3] = [-0.6, 0.15, 0.53];
const COUPLING: f64 = 0.27;

fn step(x: usize, u: usize) -> usize {
    (x + u).min(2)
}

fn base_spec(x0: f64) -> ModelSpec {
    let controls = ControlGrid::uniform_1d(0.0, 1.0, 2).unwrap();
    ModelSpec::new("brute", 1, 2.0, controls)
        .unwrap()
        .with_constant_sigma(vec![0.0])
        .with_sigma0(vec![0.0])
        .with_initial(InitialLaw::Dirac(vec![x0]))
        .with_b_circ(|_, x, u, out| out[0] = (x[0] + u[0]).clamp(0.0, 2.0) - x[0])
}

fn cell(t: f64, x: f64) -> (usize, usize) {
    (t.round() as usize, x.round() as usize)
}

/// Rewards that ignore the population.
fn decoupled(x0: f64) -> ModelSpec {
    base_spec(x0)
        .with_l_circ(|t, x, _, u| {
            let (k, i) = cell(t, x[0]);
            R[k][i][u[0] as usize]
        })
        .with_g(|x, _| G[x[0].round() as usize])
}

/// Policy `code` sends (k, x) to bit 3k + x.
fn action(code: u32, k: usize, x: usize) -> usize {
    ((code >> (3 * k + x)) & 1) as usize
}

/// Values of every policy started from state x0 at step k0.
fn enumerate_from(k0: usize, x0: usize) -> Vec<(u32, f64)> {
    (0..64)
        .map(|code| {
            let mut x = x0;
            let mut v = 0.0;
            for k in k0..2 {
                let u = action(code, k, x);
                v += R[k][x][u];
                x = step(x, u);
            }
            (code, v + G[x])
        })
        .collect()
}

fn frozen_for(spec: &ModelSpec) -> ScenarioEnsemble {
    let grid = spec.grid(2).unwrap();
    let noise = NoisePath::zero(&grid, 1);
    let flow = simulate_conditional_mkv(spec, &ConstantPolicy(0), &noise, 2, 1).unwrap();
    ScenarioEnsemble::new(vec![Scenario { noise, flow }]).unwrap()
}

fn table_action(p: &MfgPolicy, k: usize, x: usize, m: f64) -> usize {
    let f = MeasureFeatures {
        mean: vec![m],
        second_moment: vec![m * m],
        scenario: None,
    };
    p.control_index(k, k as f64, &[x as f64], &f)
}

#[test]
fn dp_matches_enumeration() {
    // the policy optimal from every starting cell (k, x)
    let mut uniform: Option<u32> = None;
    for code in 0..64u32 {
        let ok = (0..2)
            .flat_map(|k| (0..3).map(move |x| (k, x)))
            .all(|(k0, x0)| {
                let all = enumerate_from(k0, x0);
                let best = all
                    .iter()
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                all[code as usize].1 == best
            });
        if ok {
            assert!(uniform.is_none(), "instance has ties");
            uniform = Some(code);
        }
    }
    let uniform = uniform.expect("no uniformly optimal policy");
    for x0 in 0..3 {
        let spec = decoupled(x0 as f64);
        let frozen = frozen_for(&spec);
        let opts = DpOptions {
            x_count: 3,
            m_count: 3,
            x_range: Some((0.0, 2.0)),
            ..Default::default()
        };
        let br = best_response_dp(&spec, &frozen, &opts).unwrap();
        let best = enumerate_from(0, x0)
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (br.value.mean - best).abs() < 1e-12,
            "x0={x0}: dp {} vs {best}",
            br.value.mean
        );
        let m = frozen.scenarios()[0].flow.frame(0).mean_state()[0];
        for k in 0..2 {
            for x in 0..3 {
                assert_eq!(
                    table_action(&br.policy, k, x, m),
                    action(uniform, k, x),
                    "cell ({k}, {x})"
                );
            }
        }
    }
}

#[test]
fn dp_breaks_ties_toward_lowest_index() {
    let spec = base_spec(1.0);
    let frozen = frozen_for(&spec);
    let opts = DpOptions {
        x_count: 3,
        m_count: 3,
        x_range: Some((0.0, 2.0)),
        ..Default::default()
    };
    let br = best_response_dp(&spec, &frozen, &opts).unwrap();
    assert_eq!(br.value.mean, 0.0);
    for k in 0..2 {
        for x in 0..3 {
            assert_eq!(table_action(&br.policy, k, x, 1.0), 0);
        }
    }
}

/// Player 1 moves up until it reaches the top state.
fn climber() -> Arc<dyn GamePolicy> {
    Arc::new(FnGamePolicy::new(|_, _, player, states, _| {
        usize::from(states[player] < 2.0)
    }))
}

fn coupled(x0: f64) -> ModelSpec {
    // the others' state enters through the frame mean (x + y) / 2
    base_spec(x0)
        .with_l_circ(|t, x, mu, u| {
            let (k, i) = cell(t, x[0]);
            R[k][i][u[0] as usize] + COUPLING * x[0] * mu.mean_state()[0]
        })
        .with_g(|x, mu| {
            let d = x[0] - mu.mean_state()[0];
            G[x[0].round() as usize] - 0.2 * d * d
        })
}

fn enumerate_coupled(x0: usize) -> Vec<f64> {
    (0..64u32)
        .map(|code| {
            let (mut x, mut y) = (x0, x0);
            let mut v = 0.0;
            for k in 0..2 {
                let u = action(code, k, x);
                let m = 0.5 * (x + y) as f64;
                v += R[k][x][u] + COUPLING * x as f64 * m;
                x = step(x, u);
                y = step(y, usize::from(y < 2));
            }
            let d = x as f64 - 0.5 * (x + y) as f64;
            v + G[x] - 0.2 * d * d
        })
        .collect()
}

#[test]
fn nplayer_best_response_matches_enumeration() {
    for x0 in 0..3usize {
        let spec = coupled(x0 as f64);
        let grid = spec.grid(2).unwrap();
        let stay: Arc<dyn GamePolicy> = Arc::new(FnGamePolicy::new(|_, _, _, _, _| 0));
        let set = NPlayerPolicySet::new(vec![stay, climber()]).unwrap();
        let class = ResponseClass {
            x_count: 3,
            m_count: 3,
            x_range: Some((0.0, 2.0)),
            base_paths: 1,
            sweeps: 1,
        };
        let r = best_response(&spec, &set, 0, &class, &grid, 1, 7).unwrap();
        let values = enumerate_coupled(x0);
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (r.value.mean - best).abs() < 1e-12,
            "x0={x0}: {} vs {best}",
            r.value.mean
        );
        // the path the best response follows is an optimal one
        let mut x = x0;
        let mut y = x0;
        let optimal: Vec<u32> = (0..64).filter(|&c| values[c as usize] == best).collect();
        let states = |x: usize, y: usize| vec![x as f64, y as f64];
        let mut taken = Vec::new();
        for k in 0..2 {
            let f = MeasureFeatures::of_points(&states(x, y), 1);
            let u = r.policy.control_index(k, k as f64, 0, &states(x, y), &f);
            taken.push((k, x, u));
            x = step(x, u);
            y = step(y, usize::from(y < 2));
        }
        assert!(
            optimal
                .iter()
                .any(|&c| taken.iter().all(|&(k, x, u)| action(c, k, x) == u)),
            "x0={x0}: path {taken:?} is not optimal"
        );
    }
}
