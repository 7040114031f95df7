use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::measures::{Ensemble, MeasureFlow};
use crate::model::{ModelSpec, NoisePath};
use crate::policy::{MarkovPolicy, MeasureFeatures};
use crate::rng::{normal, stream, Domain, StreamRng};

/// Per-particle information available to open-loop controls: the initial
/// state and exponentially filtered idiosyncratic and common increments,
/// all read before the step's own increments are drawn.
#[derive(Debug, Clone, Copy)]
pub struct PathFeatures<'a> {
    pub xi: &'a [f64],
    pub zw: &'a [f64],
    pub zb: &'a [f64],
}

/// Anything that assigns a control index to particle `particle` at step `step`.
pub trait ParticleControl: Sync {
    fn control_index(
        &self,
        step: usize,
        t: f64,
        particle: usize,
        x: &[f64],
        features: &MeasureFeatures,
        path: &PathFeatures<'_>,
    ) -> usize;

    /// Mean-reversion rate of the path filters, `None` when unused.
    fn filter_rate(&self) -> Option<f64> {
        None
    }
}

/// Adapter running a Markov feedback through the particle simulator.
pub struct Feedback<'a>(pub &'a dyn MarkovPolicy);

impl ParticleControl for Feedback<'_> {
    #[inline]
    fn control_index(
        &self,
        step: usize,
        t: f64,
        _: usize,
        x: &[f64],
        f: &MeasureFeatures,
        _: &PathFeatures<'_>,
    ) -> usize {
        self.0.control_index(step, t, x, f)
    }
}

/// M particles sharing the common-noise path `b`; the interaction runs
/// through the empirical joint law of (state, emitted control).
/// Deterministic given `(seed, b)`.
pub fn simulate_conditional_mkv(
    spec: &ModelSpec,
    policy: &dyn MarkovPolicy,
    b: &NoisePath,
    m: usize,
    seed: u64,
) -> Result<MeasureFlow> {
    if policy.reads_scenario() {
        return Err(domain(
            "policy reads a scenario index; use simulate_particles with a scenario",
        ));
    }
    simulate_particles(spec, &Feedback(policy), b, m, seed, None)
}

/// General particle simulator behind [`simulate_conditional_mkv`].
pub fn simulate_particles(
    spec: &ModelSpec,
    control: &dyn ParticleControl,
    b: &NoisePath,
    m: usize,
    seed: u64,
    scenario: Option<usize>,
) -> Result<MeasureFlow> {
    if m < 2 {
        return Err(domain("need at least two particles"));
    }
    spec.check_shape()?;
    let grid = b.grid().clone();
    if b.dim() != spec.n {
        return Err(domain("noise path dimension differs from state dimension"));
    }
    let (n, q) = (spec.n, spec.q);
    let kk = grid.steps();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let weights: Arc<[f64]> = vec![1.0 / m as f64; m].into();

    let mut rngs: Vec<StreamRng> = (0..m)
        .map(|a| stream(seed, Domain::Particle, &[a as u64]))
        .collect();
    let mut xs = vec![0.0; m * n];
    for (a, rng) in rngs.iter_mut().enumerate() {
        spec.initial.sample(rng, &mut xs[a * n..(a + 1) * n]);
    }
    let xi = xs.clone();
    let rho = control.filter_rate();
    let mut zw = vec![0.0; if rho.is_some() { m * n } else { 0 }];
    let mut zb = vec![0.0; n];
    let mut frames = Vec::with_capacity(kk + 1);
    let mut sig = vec![0.0; n * n];
    let mut bstar = vec![0.0; n];
    let mut bc = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut nf = vec![0.0; n];

    for k in 0..=kk {
        let t = grid.time(k);
        let mut features = features_of(&xs, n, m);
        features.scenario = scenario;
        let mut us = vec![0.0; m * q];
        for a in 0..m {
            let path = PathFeatures {
                xi: &xi[a * n..(a + 1) * n],
                zw: if rho.is_some() {
                    &zw[a * n..(a + 1) * n]
                } else {
                    &[]
                },
                zb: &zb,
            };
            let idx = control.control_index(k, t, a, &xs[a * n..(a + 1) * n], &features, &path);
            us[a * q..(a + 1) * q].copy_from_slice(spec.controls.point(idx));
        }
        let frame = Ensemble::uniform_shared(t, n, q, xs.clone(), us, weights.clone())?;
        if k == kk {
            frames.push(frame);
            break;
        }
        (spec.b_star)(t, &frame, &mut bstar);
        if let Some(fb) = &spec.noise_feedback {
            let node = (k / fb.stride) * fb.stride;
            (fb.drift)(t, b.value(node), &mut nf);
            for d in 0..n {
                bstar[d] += nf[d];
            }
        }
        if spec.constant_sigma {
            (spec.sigma)(t, &xs[..n], &mut sig);
        }
        let db: Vec<f64> = (0..n).map(|d| b.increment(k, d)).collect();
        let common: Vec<f64> = (0..n)
            .map(|r| (0..n).map(|c| spec.sigma0[r * n + c] * db[c]).sum())
            .collect();
        for a in 0..m {
            let x = &xs[a * n..(a + 1) * n];
            let u = frame.control(a);
            (spec.b_circ)(t, x, u, &mut bc);
            if !spec.constant_sigma {
                (spec.sigma)(t, x, &mut sig);
            }
            for d in 0..n {
                dw[d] = sdt * normal(&mut rngs[a]);
            }
            for r in 0..n {
                let mut diff = 0.0;
                for c in 0..n {
                    diff += sig[r * n + c] * dw[c];
                }
                let v = xs[a * n + r] + (bstar[r] + bc[r]) * dt + diff + common[r];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        step: k,
                        who: format!("particle {a}"),
                    });
                }
                xs[a * n + r] = v;
            }
            if let Some(rho) = rho {
                for d in 0..n {
                    zw[a * n + d] = zw[a * n + d] * (1.0 - rho * dt) + dw[d];
                }
            }
        }
        if let Some(rho) = rho {
            for d in 0..n {
                zb[d] = zb[d] * (1.0 - rho * dt) + db[d];
            }
        }
        frames.push(frame);
    }
    MeasureFlow::new(grid, frames)
}

/// Mean and second moment in particle order.
pub(crate) fn features_of(xs: &[f64], n: usize, m: usize) -> MeasureFeatures {
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for a in 0..m {
        for d in 0..n {
            let v = xs[a * n + d];
            mean[d] += v;
            second[d] += v * v;
        }
    }
    for d in 0..n {
        mean[d] /= m as f64;
        second[d] /= m as f64;
    }
    MeasureFeatures {
        mean,
        second_moment: second,
        scenario: None,
    }
}

/// Average realized reward Σ_k L Δt + g over the particles of a simulated
/// flow (atom `a` of every frame is the same particle). Returns per-particle
/// rewards.
pub fn particle_rewards(spec: &ModelSpec, flow: &MeasureFlow) -> Vec<f64> {
    let grid = flow.grid();
    let dt = grid.dt();
    let m = flow.frame(0).len();
    let mut r = vec![0.0; m];
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let f = flow.frame(k);
        let marginal = f.state_marginal();
        for (a, ra) in r.iter_mut().enumerate() {
            let x = f.state(a);
            let u = f.control(a);
            *ra += dt * ((spec.l_star)(t, &x, f) + (spec.l_circ)(t, &x, &marginal, u));
        }
    }
    let last = flow.frame(grid.steps()).state_marginal();
    for (a, ra) in r.iter_mut().enumerate() {
        *ra += (spec.g)(&last.state(a), &last);
    }
    r
}
