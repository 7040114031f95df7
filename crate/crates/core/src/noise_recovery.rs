//! Reading the common noise back off a conditional measure flow.
//!
//! Along a flow of conditional laws the mean moves by the averaged drift
//! plus σ0 dB, so B_t = σ0^{-1}[∫x μ_t − ∫x μ_0 − ∫_0^t ∫ b dν̄_s ds]. Time
//! integrals use the simulator's left-endpoint rule, which makes recovery
//! exact by telescoping when the idiosyncratic noise is absent.

use serde::Serialize;

use crate::error::{domain, Result};
use crate::measures::{Ensemble, MeasureFlow};
use crate::mfg::simulate_conditional_mkv;
use crate::model::{invert, ModelSpec, NoisePath, TimeGrid};
use crate::policy::MarkovPolicy;

/// Default subdivision stride for the recursive recovery.
pub const DEFAULT_STRIDE: usize = 8;

/// ∫ b(t, x, ν̄, u) ν̄(dx, du), without any noise feedback term.
fn mean_drift(spec: &ModelSpec, t: f64, frame: &Ensemble, out: &mut [f64]) {
    let n = spec.n;
    (spec.b_star)(t, frame, out);
    let mut bc = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for a in 0..frame.len() {
        (spec.b_circ)(t, &frame.state(a), frame.control(a), &mut bc);
        let w = frame.weight(a);
        for d in 0..n {
            acc[d] += w * bc[d];
        }
    }
    for d in 0..n {
        out[d] += acc[d];
    }
}

fn check_frames(spec: &ModelSpec, frames: &[Ensemble]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(domain("no frames to recover from"));
    }
    if frames[0].n() != spec.n {
        return Err(domain("flow dimension differs from the model"));
    }
    invert(&spec.sigma0, spec.n)
}

fn apply(inv: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..n {
        out[r] = (0..n).map(|c| inv[r * n + c] * v[c]).sum();
    }
}

/// Recovered B at every node of `frames` (len × n), left-endpoint drift
/// integral. Frame k only influences nodes ≥ k.
pub fn recover_values_global(spec: &ModelSpec, dt: f64, frames: &[Ensemble]) -> Result<Vec<f64>> {
    if spec.noise_feedback.is_some() {
        return Err(domain(
            "the drift reads the common noise; use the recursive recovery",
        ));
    }
    recover(spec, dt, frames, None)
}

/// Recursive recovery: on each subdivision interval the drift reads B
/// frozen at the interval's left node, itself recovered from earlier
/// frames. Identical to [`recover_values_global`] when the drift ignores B.
pub fn recover_values_recursive(
    spec: &ModelSpec,
    dt: f64,
    frames: &[Ensemble],
    stride: usize,
) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(domain("subdivision stride must be positive"));
    }
    recover(spec, dt, frames, Some(stride))
}

fn recover(
    spec: &ModelSpec,
    dt: f64,
    frames: &[Ensemble],
    stride: Option<usize>,
) -> Result<Vec<f64>> {
    let inv = check_frames(spec, frames)?;
    let n = spec.n;
    let m0 = frames[0].mean_state().to_vec();
    let mut out = vec![0.0; frames.len() * n];
    let mut acc = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut nf = vec![0.0; n];
    let mut diff = vec![0.0; n];
    for k in 1..frames.len() {
        let prev = &frames[k - 1];
        let t = prev.time();
        mean_drift(spec, t, prev, &mut drift);
        if let (Some(s), Some(fb)) = (stride, &spec.noise_feedback) {
            let node = ((k - 1) / s) * s;
            (fb.drift)(t, &out[node * n..(node + 1) * n], &mut nf);
            for d in 0..n {
                drift[d] += nf[d];
            }
        }
        for d in 0..n {
            acc[d] += dt * drift[d];
        }
        let m = frames[k].mean_state();
        for d in 0..n {
            diff[d] = m[d] - m0[d] - acc[d];
        }
        apply(&inv, n, &diff, &mut out[k * n..(k + 1) * n]);
    }
    Ok(out)
}

fn as_path(grid: &TimeGrid, n: usize, values: Vec<f64>) -> Result<NoisePath> {
    NoisePath::from_values(grid, n, values)
}

/// Common noise recovered from a flow of joint measures.
pub fn recover_noise_global(spec: &ModelSpec, flow: &MeasureFlow) -> Result<NoisePath> {
    let v = recover_values_global(spec, flow.grid().dt(), flow.frames())?;
    as_path(flow.grid(), spec.n, v)
}

/// Recursive recovery with subdivision every `stride` nodes.
pub fn recover_noise_recursive(
    spec: &ModelSpec,
    flow: &MeasureFlow,
    stride: usize,
) -> Result<NoisePath> {
    let v = recover_values_recursive(spec, flow.grid().dt(), flow.frames(), stride)?;
    as_path(flow.grid(), spec.n, v)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripReport {
    pub particles: usize,
    pub recursive: bool,
    /// max_d |recovered − true| per node.
    pub per_node: Vec<f64>,
    pub sup_error: f64,
    pub worst_node: usize,
}

/// Per-node error between `recovered` and `truth`.
pub fn compare_paths(recovered: &NoisePath, truth: &NoisePath) -> Result<(Vec<f64>, f64, usize)> {
    if recovered.len() != truth.len() || recovered.dim() != truth.dim() {
        return Err(domain("paths differ in length or dimension"));
    }
    let per: Vec<f64> = (0..truth.len())
        .map(|k| {
            recovered
                .value(k)
                .iter()
                .zip(truth.value(k))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let (worst, sup) = per.iter().enumerate().fold(
        (0, 0.0),
        |acc, (k, &e)| if e > acc.1 { (k, e) } else { acc },
    );
    Ok((per, sup, worst))
}

/// Samples B, simulates M particles under `policy`, recovers B (recursively
/// when the drift reads B, with the model's own stride) and reports errors.
pub fn roundtrip_check(
    spec: &ModelSpec,
    policy: &dyn MarkovPolicy,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
) -> Result<RoundtripReport> {
    let truth = NoisePath::sample(grid, spec.n, seed, 0);
    let flow = simulate_conditional_mkv(spec, policy, &truth, particles, seed)?;
    let (rec, recursive) = match &spec.noise_feedback {
        Some(fb) => (recover_noise_recursive(spec, &flow, fb.stride)?, true),
        None => (recover_noise_global(spec, &flow)?, false),
    };
    let (per_node, sup_error, worst_node) = compare_paths(&rec, &truth)?;
    Ok(RoundtripReport {
        particles,
        recursive,
        per_node,
        sup_error,
        worst_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog::{zero_drift, ZeroDriftParams};
    use crate::policy::ConstantPolicy;

    #[test]
    fn deterministic_recovery_is_exact() {
        let p = ZeroDriftParams {
            sigma: 0.0,
            xi_sd: 0.0,
            ..Default::default()
        };
        let spec = zero_drift(&p).unwrap();
        let grid = spec.grid(50).unwrap();
        let r = roundtrip_check(&spec, &ConstantPolicy(0), &grid, 10, 3).unwrap();
        assert!(r.sup_error <= 1e-12, "{}", r.sup_error);
    }

    #[test]
    fn singular_noise_rejected() {
        let spec = zero_drift(&ZeroDriftParams::default())
            .unwrap()
            .with_sigma0(vec![0.0]);
        let grid = spec.grid(4).unwrap();
        let flow = crate::mfg::simulate_conditional_mkv(
            &spec,
            &ConstantPolicy(0),
            &NoisePath::zero(&grid, 1),
            4,
            1,
        )
        .unwrap();
        assert!(recover_noise_global(&spec, &flow).is_err());
    }
}
