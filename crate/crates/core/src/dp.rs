//! Backward dynamic programming on a (t, x, m) grid.
//!
//! `m` is the mean of the population the player faces: the conditional mean
//! of the equilibrium flow in the mean field problem, or the mean of the
//! other players in the N-player game. An environment supplies, at every
//! time node, an axis for `m`, the drift of `m`, the size of its noise and a
//! representative joint measure for each `m` node. The player's next state
//! and the next `m` share the common-noise increment; the expectation over
//! the Gaussian increments uses a 5×5 Gauss–Hermite product rule on the
//! Cholesky factor of their covariance. One-dimensional states only.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::interp::{cubic_1d, cubic_2d, Axis};
use crate::measures::Ensemble;
use crate::model::{ModelSpec, TimeGrid};
use crate::policy::{FeedbackTable, MarkovPolicy, MeasureFeatures};

/// Probabilists' Gauss–Hermite rule, 5 nodes (E[f(Z)], Z ~ N(0,1)).
pub const GH_NODES: [f64; 5] = [
    -2.856_970_013_872_806,
    -1.355_626_179_974_266,
    0.0,
    1.355_626_179_974_266,
    2.856_970_013_872_806,
];
pub const GH_WEIGHTS: [f64; 5] = [
    0.011_257_411_327_720_691,
    0.222_075_922_005_612_6,
    8.0 / 15.0,
    0.222_075_922_005_612_6,
    0.011_257_411_327_720_691,
];

/// What the player's world looks like at each time node.
pub trait DpEnvironment: Sync {
    fn grid(&self) -> &TimeGrid;
    fn m_axis(&self, k: usize) -> Axis;
    /// Deterministic part of the next mean, m + D_k(m) Δt.
    fn m_next(&self, k: usize, m: f64) -> f64;
    /// Standard deviation per unit √Δt of noise on `m` that is independent
    /// of the player's own noise.
    fn m_extra_sd(&self, k: usize) -> f64;
    /// False when the common-noise increment is known in advance (read from
    /// a scenario); it then enters through [`Self::x_common_shift`].
    fn common_noise_random(&self) -> bool;
    fn x_common_shift(&self, _k: usize) -> f64 {
        0.0
    }
    /// Representative joint measure at node (k, m_j).
    fn measure(&self, k: usize, j: usize) -> &Ensemble;
    /// Index of the player's own atom inside [`Self::measure`], if present.
    fn own_atom(&self) -> Option<usize> {
        None
    }
    /// Features a policy would observe at (k, m_j) with own state x.
    fn features(&self, k: usize, j: usize, x: f64) -> MeasureFeatures;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Mode {
    Optimize,
    Evaluate,
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct DpSolution {
    /// Argmax table (in evaluation mode: the evaluated policy's controls).
    pub table: FeedbackTable,
    /// V_0 on `x_axis × m_axis(0)`, indexed `[i * m_count + j]`.
    pub v0: Vec<f64>,
    pub m0_axis: Axis,
    /// Number of interpolation queries that fell outside the grid.
    pub extrapolated: usize,
}

impl DpSolution {
    pub fn value_at(&self, x: f64, m: f64) -> f64 {
        let mc = self.m0_axis.count;
        cubic_2d(&self.table.x_axis, &self.m0_axis, x, m, |i, j| {
            self.v0[i * mc + j]
        })
        .0
    }

    /// ∫ V_0(x, m) ν(dx) for an initial ensemble ν.
    pub fn integrate(&self, nu: &Ensemble, m: f64) -> f64 {
        (0..nu.len())
            .map(|a| nu.weight(a) * self.value_at(nu.state_coord(a, 0), m))
            .sum()
    }
}

struct Quadrature {
    dx: Vec<f64>,
    dm: Vec<f64>,
    w: Vec<f64>,
}

/// Nodes for (σ ΔW + σ0 ΔB, σ0 ΔB + s ΔW̃) with ΔW, ΔB, ΔW̃ ~ N(0, Δt).
fn quadrature(sigma: f64, sigma0: f64, s: f64, dt: f64) -> Quadrature {
    let c11 = (sigma * sigma + sigma0 * sigma0) * dt;
    let c12 = sigma0 * sigma0 * dt;
    let c22 = (sigma0 * sigma0 + s * s) * dt;
    let a = c11.sqrt();
    let b = if a > 0.0 { c12 / a } else { 0.0 };
    let c = (c22 - b * b).max(0.0).sqrt();
    let mut q = Quadrature {
        dx: vec![],
        dm: vec![],
        w: vec![],
    };
    // a degenerate direction gets one node of weight 1
    let rule = |active: bool| -> Vec<(f64, f64)> {
        if active {
            GH_NODES.iter().copied().zip(GH_WEIGHTS).collect()
        } else {
            vec![(0.0, 1.0)]
        }
    };
    for &(z1, w1) in &rule(a > 0.0 || b != 0.0) {
        for &(z2, w2) in &rule(c > 0.0) {
            q.dx.push(a * z1);
            q.dm.push(b * z1 + c * z2);
            q.w.push(w1 * w2);
        }
    }
    q
}

/// Backward induction. In `Evaluate` mode the control at each node is the
/// one `policy` picks there instead of the argmax.
pub fn solve(
    spec: &ModelSpec,
    env: &dyn DpEnvironment,
    x_axis: Axis,
    mode: Mode,
    policy: Option<&dyn MarkovPolicy>,
) -> Result<DpSolution> {
    if spec.n != 1 {
        return Err(domain(
            "dynamic programming supports one-dimensional states only",
        ));
    }
    if spec.noise_feedback.is_some() {
        return Err(domain(
            "dynamic programming does not support drifts reading the common noise",
        ));
    }
    if mode == Mode::Evaluate && policy.is_none() {
        return Err(domain("evaluation mode needs a policy"));
    }
    let grid = env.grid().clone();
    let kk = grid.steps();
    let dt = grid.dt();
    let nx = x_axis.count;
    let xs = x_axis.nodes();
    let controls = &spec.controls;
    let nu = controls.len();
    let q = controls.dim();
    let sigma0 = spec.sigma0[0];
    let own = env.own_atom();

    let m_axes: Vec<Axis> = (0..=kk).map(|k| env.m_axis(k)).collect();

    // terminal values
    let mut v_next: Vec<f64> = {
        let ma = m_axes[kk];
        let mut v = vec![0.0; nx * ma.count];
        for j in 0..ma.count {
            let ens = env.measure(kk, j);
            for i in 0..nx {
                let x = [xs[i]];
                v[i * ma.count + j] = match own {
                    Some(o) => {
                        let e = ens.with_replaced(o, &x, &ens_control(ens, o, q));
                        (spec.g)(&x, &e.state_marginal())
                    }
                    None => (spec.g)(&x, &ens.state_marginal()),
                };
            }
        }
        v
    };
    let mut table_values: Vec<Vec<f64>> = vec![Vec::new(); kk + 1];
    // the last node's controls only matter for the terminal joint measure
    table_values[kk] = {
        let ma = m_axes[kk];
        let mut out = vec![0.0; nx * ma.count * q];
        for i in 0..nx {
            for j in 0..ma.count {
                let idx = match (mode, policy) {
                    (Mode::Evaluate, Some(p)) => {
                        p.control_index(kk, grid.time(kk), &[xs[i]], &env.features(kk, j, xs[i]))
                    }
                    _ => 0,
                };
                out[(i * ma.count + j) * q..(i * ma.count + j + 1) * q]
                    .copy_from_slice(controls.point(idx));
            }
        }
        out
    };
    let mut extrapolated = 0usize;

    for k in (0..kk).rev() {
        let t = grid.time(k);
        let (ma, ma1) = (m_axes[k], m_axes[k + 1]);
        let common = env.common_noise_random();
        let s_extra = env.m_extra_sd(k);
        let shift = env.x_common_shift(k);
        let vn = &v_next;
        let sig_const = spec.constant_sigma.then(|| {
            let mut s = [0.0];
            (spec.sigma)(t, &[0.0], &mut s);
            s[0]
        });

        let rows: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = (0..ma.count)
            .into_par_iter()
            .map(|j| {
                let m = ma.node(j);
                let mn = env.m_next(k, m);
                let ens = env.measure(k, j);
                let marginal = ens.state_marginal();
                let mut clamped = 0usize;
                let s0 = if common { sigma0 } else { 0.0 };
                let cont_at = |quad: &Quadrature, y: f64, clamped: &mut usize| -> f64 {
                    let mut acc = 0.0;
                    for g in 0..quad.w.len() {
                        let (v, c) =
                            cubic_2d(&x_axis, &ma1, y + quad.dx[g], mn + quad.dm[g], |a, b| {
                                vn[a * ma1.count + b]
                            });
                        *clamped += c as usize;
                        acc += quad.w[g] * v;
                    }
                    acc
                };
                // continuation C(y) = E V_{k+1}(y + noise, m' + noise) on the x nodes
                let cont_table: Option<Vec<f64>> = sig_const.map(|sg| {
                    let quad = quadrature(sg, s0, s_extra, dt);
                    xs.iter()
                        .map(|&y| cont_at(&quad, y, &mut clamped))
                        .collect()
                });
                let mut bstar = [0.0];
                if own.is_none() {
                    (spec.b_star)(t, ens, &mut bstar);
                }
                let mut vals = vec![0.0; nx];
                let mut ctrl = vec![0.0; nx * q];
                let mut bc = [0.0];
                for i in 0..nx {
                    let x = [xs[i]];
                    let lstar = if own.is_none() {
                        (spec.l_star)(t, &x, ens)
                    } else {
                        0.0
                    };
                    let quad_i = if sig_const.is_none() {
                        let mut s = [0.0];
                        (spec.sigma)(t, &x, &mut s);
                        Some(quadrature(s[0], s0, s_extra, dt))
                    } else {
                        None
                    };
                    let fixed = match (mode, policy) {
                        (Mode::Evaluate, Some(p)) => {
                            Some(p.control_index(k, t, &x, &env.features(k, j, xs[i])))
                        }
                        _ => None,
                    };
                    let mut best = f64::NEG_INFINITY;
                    let mut best_u = 0usize;
                    let candidates: Box<dyn Iterator<Item = usize>> = match fixed {
                        Some(u) => Box::new(std::iter::once(u)),
                        None => Box::new(0..nu),
                    };
                    for ui in candidates {
                        let u = controls.point(ui);
                        let (reward, bs) = match own {
                            Some(o) => {
                                let e = ens.with_replaced(o, &x, u);
                                let mut b = [0.0];
                                (spec.b_star)(t, &e, &mut b);
                                (
                                    (spec.l_star)(t, &x, &e)
                                        + (spec.l_circ)(t, &x, &e.state_marginal(), u),
                                    b[0],
                                )
                            }
                            None => (lstar + (spec.l_circ)(t, &x, &marginal, u), bstar[0]),
                        };
                        (spec.b_circ)(t, &x, u, &mut bc);
                        let y = x[0] + (bs + bc[0]) * dt + shift;
                        let cont = match (&cont_table, &quad_i) {
                            (Some(ct), _) => {
                                let (v, c) = cubic_1d(&x_axis, y, |a| ct[a]);
                                clamped += c as usize;
                                v
                            }
                            (None, Some(quad)) => cont_at(quad, y, &mut clamped),
                            _ => unreachable!(),
                        };
                        let qv = reward * dt + cont;
                        if !qv.is_finite() {
                            return Err(Error::NonFinite {
                                step: k,
                                who: format!("value at x={}", x[0]),
                            });
                        }
                        if qv > best {
                            best = qv;
                            best_u = ui;
                        }
                    }
                    vals[i] = best;
                    ctrl[i * q..(i + 1) * q].copy_from_slice(controls.point(best_u));
                }
                Ok((vals, ctrl, clamped))
            })
            .collect();

        let mut v = vec![0.0; nx * ma.count];
        let mut tv = vec![0.0; nx * ma.count * q];
        for (j, row) in rows.into_iter().enumerate() {
            let (vals, ctrl, c) = row?;
            extrapolated += c;
            for i in 0..nx {
                v[i * ma.count + j] = vals[i];
                let at = (i * ma.count + j) * q;
                tv[at..at + q].copy_from_slice(&ctrl[i * q..(i + 1) * q]);
            }
        }
        table_values[k] = tv;
        v_next = v;
    }

    let table = FeedbackTable::new(
        grid.times(),
        x_axis,
        m_axes.clone(),
        controls.clone(),
        table_values.concat(),
    )?;
    Ok(DpSolution {
        table,
        v0: v_next,
        m0_axis: m_axes[0],
        extrapolated,
    })
}

fn ens_control(e: &Ensemble, i: usize, q: usize) -> Vec<f64> {
    let c = e.control(i);
    if c.len() == q {
        c.to_vec()
    } else {
        vec![0.0; q]
    }
}
