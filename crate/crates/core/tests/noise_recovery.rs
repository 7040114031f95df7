use mfgc_core::measures::{shift_flow, MeasureFlow};
use mfgc_core::mfg::simulate_conditional_mkv;
use mfgc_core::model::catalog::{lq1d, zero_drift, LqParams, ZeroDriftParams};
use mfgc_core::model::NoisePath;
use mfgc_core::noise_recovery::{
    compare_paths, recover_noise_global, recover_noise_recursive, recover_values_global,
    recover_values_recursive, roundtrip_check,
};
use mfgc_core::policy::{ConstantPolicy, FnPolicy};

#[test]
fn recovery_is_causal() {
    let spec = lq1d(&LqParams::default()).unwrap();
    let grid = spec.grid(40).unwrap();
    let b = NoisePath::sample(&grid, 1, 5, 0);
    let pol = FnPolicy::new(|_, _, x, f| if x[0] > f.mean[0] { 30 } else { 50 });
    let flow = simulate_conditional_mkv(&spec, &pol, &b, 300, 2).unwrap();
    let full = recover_values_global(&spec, grid.dt(), flow.frames()).unwrap();
    for cut in [1, 7, 23, 40] {
        let part = recover_values_global(&spec, grid.dt(), &flow.frames()[..=cut]).unwrap();
        assert_eq!(part[..], full[..=cut]);
        let rec = recover_values_recursive(&spec, grid.dt(), &flow.frames()[..=cut], 8).unwrap();
        assert_eq!(
            rec[..],
            recover_values_recursive(&spec, grid.dt(), flow.frames(), 8).unwrap()[..=cut]
        );
    }
}

#[test]
fn recursion_equals_global_without_feedback() {
    let spec = lq1d(&LqParams::default()).unwrap();
    let grid = spec.grid(30).unwrap();
    let b = NoisePath::sample(&grid, 1, 1, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(40), &b, 200, 1).unwrap();
    let g = recover_noise_global(&spec, &flow).unwrap();
    for stride in [1, 3, 8] {
        assert_eq!(recover_noise_recursive(&spec, &flow, stride).unwrap(), g);
    }
}

#[test]
fn shifting_by_a_linear_path_moves_recovery_by_it() {
    // b ≡ 0: translating μ_t by σ0 c t adds exactly c t to the recovered B
    let spec = zero_drift(&ZeroDriftParams {
        sigma0: 0.7,
        ..Default::default()
    })
    .unwrap();
    let grid = spec.grid(25).unwrap();
    let b = NoisePath::sample(&grid, 1, 4, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 100, 3).unwrap();
    let c = 1.3;
    let line = NoisePath::from_fn(&grid, 1, |t, out| out[0] = c * t).unwrap();
    let moved: MeasureFlow = shift_flow(&flow, &line, 1.0, &spec.sigma0).unwrap();
    let base = recover_noise_global(&spec, &flow).unwrap();
    let shifted = recover_noise_global(&spec, &moved).unwrap();
    for k in 0..=grid.steps() {
        assert!((shifted.value(k)[0] - base.value(k)[0] - c * grid.time(k)).abs() < 1e-12);
    }
}

#[test]
fn feedback_models_need_the_recursion() {
    let p = ZeroDriftParams {
        sigma: 0.0,
        xi_sd: 0.0,
        noise_drift: 0.8,
        noise_stride: 4,
        ..Default::default()
    };
    let spec = zero_drift(&p).unwrap();
    let grid = spec.grid(32).unwrap();
    let b = NoisePath::sample(&grid, 1, 2, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 4, 1).unwrap();
    assert!(recover_noise_global(&spec, &flow).is_err());
    let rec = recover_noise_recursive(&spec, &flow, 4).unwrap();
    let (_, sup, _) = compare_paths(&rec, &b).unwrap();
    assert!(sup < 1e-12, "{sup}");
    let r = roundtrip_check(&spec, &ConstantPolicy(0), &grid, 4, 2).unwrap();
    assert!(r.recursive);
    assert!(r.sup_error < 1e-12);
}

#[test]
fn gaussian_recovery_error_shrinks_with_particles() {
    let spec = zero_drift(&ZeroDriftParams::default()).unwrap();
    let grid = spec.grid(50).unwrap();
    let err = |m: usize| -> f64 {
        (0..4)
            .map(|s| {
                roundtrip_check(&spec, &ConstantPolicy(0), &grid, m, s)
                    .unwrap()
                    .sup_error
            })
            .sum::<f64>()
            / 4.0
    };
    let (small, large) = (err(100), err(4900));
    assert!(large < 0.1, "{large}");
    assert!(small / large > 2.0, "{small} / {large}");
}

#[test]
fn recovery_is_pure() {
    let spec = zero_drift(&ZeroDriftParams::default()).unwrap();
    let grid = spec.grid(10).unwrap();
    let b = NoisePath::sample(&grid, 1, 2, 0);
    let flow = simulate_conditional_mkv(&spec, &ConstantPolicy(0), &b, 20, 1).unwrap();
    assert_eq!(
        recover_noise_global(&spec, &flow).unwrap(),
        recover_noise_global(&spec, &flow).unwrap()
    );
}
