use std::sync::Arc;

use mfgc_core::model::catalog::{lq1d, zero_drift, LqParams, ZeroDriftParams};
use mfgc_core::model::{InitialLaw, ModelSpec, NoisePath};
use mfgc_core::nplayer::{
    game_noise, lift_policy, nash_gap, player_costs, simulate_game, simulate_game_with_inputs,
    FnGamePolicy, GameInputs, GamePolicy, Lifted, NPlayerPolicySet, ResponseClass,
};
use mfgc_core::policy::{ConstantPolicy, FnPolicy, MarkovPolicy};
use proptest::prelude::*;

fn lq() -> ModelSpec {
    lq1d(&LqParams::default()).unwrap()
}

fn mean_reverting() -> Arc<dyn MarkovPolicy> {
    Arc::new(FnPolicy::new(
        |_, _, x, f| if x[0] > f.mean[0] { 30 } else { 50 },
    ))
}

#[test]
fn changing_one_policy_keeps_every_noise_draw() {
    let spec = lq();
    let grid = spec.grid(20).unwrap();
    let set = lift_policy(mean_reverting(), 5).unwrap();
    let other = set.with_player(2, Arc::new(Lifted(Arc::new(ConstantPolicy(0)))));
    let a = simulate_game(&spec, &set, game_noise(&grid, 1, 3, 0), 3, 0).unwrap();
    let b = simulate_game(&spec, &other, game_noise(&grid, 1, 3, 0), 3, 0).unwrap();
    assert_eq!(a.inputs, b.inputs);
    assert_ne!(a.states[20], b.states[20]);
}

#[test]
fn player_streams_do_not_depend_on_player_count() {
    let spec = lq();
    let grid = spec.grid(10).unwrap();
    let small = GameInputs::sample(&spec, NoisePath::zero(&grid, 1), 3, 5, 1);
    let big = GameInputs::sample(&spec, NoisePath::zero(&grid, 1), 8, 5, 1);
    assert_eq!(small.xi[..], big.xi[..3]);
    assert_eq!(small.dw[..], big.dw[..3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permuting_inputs_permutes_trajectories(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), seed in 0u64..1000) {
        let spec = lq();
        let grid = spec.grid(15).unwrap();
        let set = lift_policy(mean_reverting(), 6).unwrap();
        let inputs = GameInputs::sample(&spec, game_noise(&grid, 1, seed, 0), 6, seed, 0);
        let a = simulate_game_with_inputs(&spec, &set, inputs.clone()).unwrap();
        let b = simulate_game_with_inputs(&spec, &set, inputs.permuted(&perm)).unwrap();
        for k in 0..=15 {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(a.state(k, i), b.state(k, p));
                prop_assert_eq!(a.controls[k][i], b.controls[k][p]);
            }
            prop_assert!(a.frames[k].same_atoms(&b.frames[k]));
        }
        let (ca, cb) = (player_costs(&spec, &a), player_costs(&spec, &b));
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(ca[i], cb[p]);
        }
    }
}

#[test]
fn empirical_marginal_is_the_state_measure() {
    let spec = lq();
    let grid = spec.grid(10).unwrap();
    let set = lift_policy(mean_reverting(), 7).unwrap();
    let tr = simulate_game(&spec, &set, game_noise(&grid, 1, 2, 0), 2, 0).unwrap();
    let joint = tr.empirical_flow().unwrap();
    let states = tr.state_flow().unwrap();
    for k in 0..=10 {
        let mut from_joint = joint.frame(k).state_marginal().state_coordinate(0);
        let mut direct = tr.states[k].clone();
        from_joint.sort_by(f64::total_cmp);
        direct.sort_by(f64::total_cmp);
        assert_eq!(from_joint, direct);
        assert!(states.frame(k).same_atoms(&joint.frame(k).state_marginal()));
    }
}

#[test]
fn lifted_constant_is_constant() {
    let spec = lq();
    let grid = spec.grid(10).unwrap();
    let set = lift_policy(Arc::new(ConstantPolicy(12)), 4).unwrap();
    assert!(set.is_symmetric());
    let tr = simulate_game(&spec, &set, game_noise(&grid, 1, 1, 0), 1, 0).unwrap();
    assert!(tr.controls.iter().flatten().all(|&c| c == 12));
}

#[test]
fn single_player_sees_its_own_dirac() {
    let spec = lq();
    let grid = spec.grid(5).unwrap();
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let log = seen.clone();
    let beta = FnPolicy::new(move |_, _, x, f| {
        log.lock()
            .unwrap()
            .push((x[0], f.mean[0], f.second_moment[0]));
        40
    });
    let set = lift_policy(Arc::new(beta), 1).unwrap();
    simulate_game(&spec, &set, game_noise(&grid, 1, 1, 0), 1, 0).unwrap();
    for (x, m, s) in seen.lock().unwrap().iter() {
        assert_eq!(x, m);
        assert!((s - x * x).abs() <= 1e-12 * (1.0 + x * x));
    }
}

#[test]
fn lifted_policy_ignores_player_labels() {
    let set = lift_policy(mean_reverting(), 4).unwrap();
    let states = [0.3, -1.2, 2.0, 0.7];
    let f = mfgc_core::policy::MeasureFeatures::of_points(&states, 1);
    let perm = [2usize, 0, 3, 1];
    let mut permuted = [0.0; 4];
    for (i, &p) in perm.iter().enumerate() {
        permuted[p] = states[i];
    }
    let fp = mfgc_core::policy::MeasureFeatures::of_points(&permuted, 1);
    assert_eq!(f, fp);
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(
            set.policy(i).control_index(0, 0.0, i, &states, &f),
            set.policy(p).control_index(0, 0.0, p, &permuted, &fp)
        );
    }
}

#[test]
fn inert_game_has_no_gap() {
    // nothing the player does changes the reward
    let spec = zero_drift(&ZeroDriftParams::default()).unwrap();
    let grid = spec.grid(10).unwrap();
    let set = lift_policy(Arc::new(ConstantPolicy(0)), 3).unwrap();
    let class = ResponseClass {
        x_count: 11,
        m_count: 3,
        base_paths: 4,
        ..Default::default()
    };
    let r = nash_gap(&spec, &set, &class, &grid, 8, 1).unwrap();
    assert_eq!(r.gaps.len(), 1);
    assert_eq!(r.max_gap, 0.0);
}

#[test]
fn single_player_gap_is_the_optimality_gap() {
    // one player with a deterministic ODE: the best response drives x to 0
    let spec = lq1d(&LqParams {
        sigma: 0.0,
        kappa: 0.0,
        c: 0.0,
        c_terminal: 0.0,
        u_count: 41,
        ..Default::default()
    })
    .unwrap()
    .with_sigma0(vec![0.0])
    .with_initial(InitialLaw::Dirac(vec![1.0]));
    let grid = spec.grid(20).unwrap();
    let zero = spec.controls.nearest(&[0.0]);
    let set = NPlayerPolicySet::new(vec![
        Arc::new(Lifted(Arc::new(ConstantPolicy(zero)))) as Arc<dyn GamePolicy>
    ])
    .unwrap();
    let class = ResponseClass {
        x_count: 41,
        m_count: 3,
        x_range: Some((-1.0, 2.0)),
        base_paths: 1,
        sweeps: 2,
    };
    let r = nash_gap(&spec, &set, &class, &grid, 1, 1).unwrap();
    // u = 0 pays ∫ x² + x_T² = 2; the LQ optimum with unit weights pays
    // P(0) = 1 for this horizon, up to the control grid and Euler error
    let gap = r.gaps[0].gap.mean;
    assert!((r.gaps[0].baseline.mean + 2.0).abs() < 1e-12);
    assert!((gap - 1.0).abs() < 0.05, "{gap}");
    let stay = FnGamePolicy::new(move |_, _, _, _, _| zero);
    assert!(
        nash_gap(
            &spec,
            &NPlayerPolicySet::new(vec![Arc::new(stay)]).unwrap(),
            &class,
            &grid,
            1,
            1
        )
        .unwrap()
        .gaps[0]
            .gap
            .mean
            > 0.9
    );
}
