use std::sync::Arc;

use mfgc_core::measures::{Ensemble, Scenario, ScenarioEnsemble};
use mfgc_core::mfg::{
    best_response_dp, fokker_planck_residual, mfg_fixed_point, scenario_noise,
    simulate_conditional_mkv, simulate_particles, strong_to_openloop_view, DpOptions,
    FixedPointConfig, TestFunction,
};
use mfgc_core::model::catalog::{lq1d, zero_drift, LqParams, ZeroDriftParams};
use mfgc_core::model::{ControlGrid, InitialLaw, ModelSpec, NoisePath};
use mfgc_core::policy::{ConstantPolicy, FnPolicy, MarkovPolicy};

fn gaussian_spec() -> ModelSpec {
    zero_drift(&ZeroDriftParams::default()).unwrap()
}

#[test]
fn conditional_law_is_gaussian() {
    // X_t = ξ + W_t + B_t, so given B the law is N(B_t, 1 + t)
    let spec = gaussian_spec();
    let grid = spec.grid(50).unwrap();
    let m = 4000;
    let b = NoisePath::sample(&grid, 1, 11, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, m, 5).unwrap();
    let mut misses = 0;
    for k in 0..=grid.steps() {
        let t = grid.time(k);
        let f = flow.frame(k);
        assert_eq!(f.len(), m);
        if (f.mean_state()[0] - b.value(k)[0]).abs() > 3.0 * ((1.0 + t) / m as f64).sqrt() {
            misses += 1;
        }
    }
    assert!(misses <= 2, "{misses} nodes outside 3 sd");
    let var = flow.frame(grid.steps()).variance_state()[0];
    assert!((var - 2.0).abs() < 0.1 * 2.0, "{var}");
}

#[test]
fn deterministic_atoms_follow_the_ode() {
    let controls = ControlGrid::uniform_1d(-1.0, 1.0, 3).unwrap();
    let spec = ModelSpec::new("ode", 1, 1.0, controls)
        .unwrap()
        .with_constant_sigma(vec![0.0])
        .with_sigma0(vec![0.0])
        .with_initial(InitialLaw::Dirac(vec![0.25]))
        .with_b_circ(|_, _, u, out| out[0] = u[0]);
    let grid = spec.grid(16).unwrap();
    let flow =
        simulate_conditional_mkv(&spec, &ConstantPolicy(2), &NoisePath::zero(&grid, 1), 3, 1)
            .unwrap();
    for k in 0..=16 {
        for a in 0..3 {
            assert!((flow.frame(k).state_coord(a, 0) - (0.25 + grid.time(k))).abs() < 1e-12);
        }
    }
}

#[test]
fn policy_is_irrelevant_when_controls_are_inert() {
    let spec = gaussian_spec();
    let grid = spec.grid(20).unwrap();
    let b = NoisePath::sample(&grid, 1, 2, 3);
    let a = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 50, 9).unwrap();
    let other = FnPolicy::new(|_, _, x, _| usize::from(x[0] > 100.0));
    let c = simulate_conditional_mkv(&spec, &other, &b, 50, 9).unwrap();
    for k in 0..=20 {
        assert_eq!(
            a.frame(k).state_coordinate(0),
            c.frame(k).state_coordinate(0)
        );
    }
}

#[test]
fn particle_order_does_not_change_the_law() {
    let spec = lq1d(&LqParams::default()).unwrap();
    let grid = spec.grid(20).unwrap();
    let b = NoisePath::sample(&grid, 1, 4, 0);
    let pol = FnPolicy::new(|_, _, x, f| if x[0] > f.mean[0] { 30 } else { 50 });
    let flow = simulate_conditional_mkv(&spec, &pol, &b, 64, 3).unwrap();
    let last = flow.frame(20);
    let (mut xs, mut us, _) = last.to_arrays();
    let perm: Vec<usize> = (0..64).rev().collect();
    let rx: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
    let ru: Vec<f64> = perm.iter().map(|&i| us[i]).collect();
    let re = Ensemble::uniform(last.time(), 1, 1, rx, ru).unwrap();
    let (mut rx2, mut ru2, _) = re.to_arrays();
    for v in [&mut xs, &mut us, &mut rx2, &mut ru2] {
        v.sort_by(f64::total_cmp);
    }
    assert_eq!(xs, rx2);
    assert_eq!(us, ru2);
    assert!(mfgc_core::measures::ensemble_distance(last, &re, 1.0).unwrap() < 1e-12);
}

#[test]
fn frozen_flow_has_zero_residual() {
    let p = ZeroDriftParams {
        sigma: 0.0,
        xi_sd: 1.0,
        ..Default::default()
    };
    let spec = zero_drift(&p).unwrap().with_sigma0(vec![0.0]);
    let grid = spec.grid(10).unwrap();
    let b = NoisePath::zero(&grid, 1);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 100, 1).unwrap();
    let r = fokker_planck_residual(&spec, &flow, &b, &TestFunction::dictionary()).unwrap();
    assert_eq!(r.max_abs(), 0.0);
}

#[test]
fn residual_detects_a_translated_frame() {
    let spec = gaussian_spec();
    let grid = spec.grid(40).unwrap();
    let b = NoisePath::sample(&grid, 1, 3, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 2000, 4).unwrap();
    let f = [TestFunction::Cos { k: 1.0 }];
    let clean = fokker_planck_residual(&spec, &flow, &b, &f).unwrap();
    let k = 25;
    let moved = flow
        .with_frame(k, flow.frame(k).shifted(&[1.0]).unwrap())
        .unwrap();
    let dirty = fokker_planck_residual(&spec, &moved, &b, &f).unwrap();
    let shift = b.value(k)[0];
    let fr = flow.frame(k);
    let jump: f64 = (0..fr.len())
        .map(|a| {
            fr.weight(a)
                * ((fr.state_coord(a, 0) - shift).cos()
                    - (fr.state_coord(a, 0) + 1.0 - shift).cos())
        })
        .sum();
    assert!(((dirty.values[0][k] - clean.values[0][k]).abs() - jump.abs()).abs() < 1e-9);
}

#[test]
fn residual_rejects_unbounded_tests() {
    let spec = gaussian_spec();
    let grid = spec.grid(4).unwrap();
    let b = NoisePath::zero(&grid, 1);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 4, 1).unwrap();
    assert!(fokker_planck_residual(
        &spec,
        &flow,
        &b,
        &[TestFunction::Poly {
            coeffs: vec![0.0, 1.0]
        }]
    )
    .is_err());
}

fn lq_frozen(spec: &ModelSpec, scenarios: usize) -> ScenarioEnsemble {
    let grid = spec.grid(20).unwrap();
    let zero = spec.controls.nearest(&[0.0]);
    ScenarioEnsemble::new(
        (0..scenarios)
            .map(|s| {
                let noise = scenario_noise(&grid, 1, 8, s);
                let flow =
                    simulate_conditional_mkv(spec, &ConstantPolicy(zero), &noise, 400, s as u64)
                        .unwrap();
                Scenario { noise, flow }
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn terminal_constant_shifts_value_only() {
    let prm = LqParams {
        u_count: 21,
        ..Default::default()
    };
    let spec = lq1d(&prm).unwrap();
    let frozen = lq_frozen(&spec, 3);
    let opts = DpOptions {
        x_count: 41,
        m_count: 5,
        ..Default::default()
    };
    let a = best_response_dp(&spec, &frozen, &opts).unwrap();
    let g = spec.g.clone();
    let shifted = spec.clone().with_g(move |x, nu| g(x, nu) + 2.5);
    let b = best_response_dp(&shifted, &frozen, &opts).unwrap();
    assert!((b.value.mean - a.value.mean - 2.5).abs() < 1e-9);
    let (mfgc_core::mfg::MfgPolicy::Table(ta), mfgc_core::mfg::MfgPolicy::Table(tb)) =
        (&a.policy, &b.policy)
    else {
        panic!("expected tables");
    };
    assert_eq!(ta.values, tb.values);
}

#[test]
fn zero_reward_gives_zero_value() {
    let spec = gaussian_spec();
    let grid = spec.grid(10).unwrap();
    let noise = scenario_noise(&grid, 1, 1, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &noise, 50, 1).unwrap();
    let frozen = ScenarioEnsemble::new(vec![Scenario { noise, flow }]).unwrap();
    let br = best_response_dp(
        &spec,
        &frozen,
        &DpOptions {
            x_count: 21,
            m_count: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(br.value.mean, 0.0);
}

#[test]
fn quadratic_control_cost_picks_smallest_control() {
    let controls = ControlGrid::uniform_1d(-1.0, 2.0, 7).unwrap();
    let spec = ModelSpec::new("u2", 1, 1.0, controls)
        .unwrap()
        .with_l_circ(|_, _, _, u| -u[0] * u[0]);
    let grid = spec.grid(10).unwrap();
    let noise = NoisePath::sample(&grid, 1, 1, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &noise, 50, 1).unwrap();
    let frozen = ScenarioEnsemble::new(vec![Scenario { noise, flow }]).unwrap();
    let br = best_response_dp(
        &spec,
        &frozen,
        &DpOptions {
            x_count: 21,
            m_count: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let zero = spec.controls.nearest(&[0.0]);
    let f = mfgc_core::policy::MeasureFeatures {
        mean: vec![0.0],
        second_moment: vec![1.0],
        scenario: None,
    };
    for x in [-2.0, 0.0, 1.5] {
        assert_eq!(br.policy.control_index(3, 0.3, &[x], &f), zero);
    }
}

#[test]
fn decoupled_fixed_point_settles_immediately() {
    // rewards and drift ignore the population: the first best response is
    // already an equilibrium
    let controls = ControlGrid::uniform_1d(-1.0, 1.0, 11).unwrap();
    let spec = ModelSpec::new("decoupled", 1, 1.0, controls)
        .unwrap()
        .with_b_circ(|_, _, u, out| out[0] = u[0])
        .with_l_circ(|_, x, _, u| -x[0] * x[0] - 0.5 * u[0] * u[0])
        .with_initial(InitialLaw::Normal {
            mean: vec![0.5],
            sd: 0.5,
        });
    // a fixed state axis keeps the dynamic-programming grid identical
    // across iterations
    let dp = DpOptions {
        x_range: Some((-3.0, 4.0)),
        x_count: 71,
        m_count: 3,
        ..Default::default()
    };
    let cfg = FixedPointConfig {
        scenarios: 4,
        particles: 500,
        steps: 20,
        max_iter: 4,
        tol: 1e-9,
        dp,
        ..Default::default()
    };
    let sol = mfg_fixed_point(&spec, &cfg).unwrap();
    assert!(sol.trace.len() >= 2);
    assert!(sol.trace[1] < 1e-12, "{:?}", sol.trace);
    assert!(
        sol.epsilon.mean <= 2.0 * sol.epsilon.se + 1e-9,
        "{:?}",
        sol.epsilon
    );
}

#[test]
fn control_record_replays_states() {
    let spec = lq1d(&LqParams::default()).unwrap();
    let grid = spec.grid(20).unwrap();
    let noise = scenario_noise(&grid, 1, 2, 0);
    let pol = FnPolicy::new(|_, _, x, f| if x[0] > f.mean[0] { 35 } else { 45 });
    let rec = strong_to_openloop_view(&spec, &pol, &noise, 0, 30, 6).unwrap();
    let replay = simulate_particles(&spec, &rec.as_control(), &noise, 30, 6, Some(0)).unwrap();
    for k in 0..=20 {
        assert_eq!(replay.frame(k).state_coordinate(0), rec.states[k]);
    }
    let constant = strong_to_openloop_view(&spec, &ConstantPolicy(7), &noise, 0, 30, 6).unwrap();
    assert!(constant.controls.iter().flatten().all(|&c| c == 7));
}

#[test]
fn replay_with_other_seed_keeps_conditional_means() {
    let spec = lq1d(&LqParams::default()).unwrap();
    let grid = spec.grid(20).unwrap();
    let noise = scenario_noise(&grid, 1, 2, 0);
    let pol: Arc<dyn MarkovPolicy> =
        Arc::new(FnPolicy::new(
            |_, _, x, f| if x[0] > f.mean[0] { 35 } else { 45 },
        ));
    let a = simulate_conditional_mkv(&spec, pol.as_ref(), &noise, 4000, 1).unwrap();
    let b = simulate_conditional_mkv(&spec, pol.as_ref(), &noise, 4000, 2).unwrap();
    for k in [5, 10, 20] {
        let sd = (a.frame(k).variance_state()[0] * 2.0 / 4000.0).sqrt();
        assert!((a.frame(k).mean_state()[0] - b.frame(k).mean_state()[0]).abs() < 4.0 * sd);
    }
}
