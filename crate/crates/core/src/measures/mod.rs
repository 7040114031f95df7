//! Empirical measures on the state space and on state × control space.
//!
//! An [`Ensemble`] is a finite weighted point set standing in for a joint
//! law ν̄ of (state, control). Its state marginal (the law μ) is obtained by
//! hiding the controls, so the fiber constraint "marginal of ν̄ equals μ"
//! holds by construction. Translations and single-atom replacements are
//! applied lazily: they share the atom storage and update the cached moments
//! in O(1), which keeps the dynamic-programming and best-response inner loops
//! cheap.

mod assignment;
pub mod io;
mod wasserstein;

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{domain, Result};
use crate::model::{ControlGrid, NoisePath, TimeGrid};

pub use assignment::min_cost_assignment;
pub use wasserstein::{
    ensemble_distance, ensemble_law_distance, flow_distance, law_distance_from_costs,
    sliced_wasserstein, sliced_wasserstein_with_directions, wasserstein_1d, wasserstein_1d_points,
};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug)]
struct AtomData {
    time: f64,
    n: usize,
    q: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    weights: Arc<[f64]>,
}

#[derive(Debug)]
struct Replacement {
    index: usize,
    state: Vec<f64>,
    control: Vec<f64>,
}

/// Weighted atoms `(x_i, u_i, w_i)` at one time stamp.
#[derive(Debug, Clone)]
pub struct Ensemble {
    data: Arc<AtomData>,
    hide_controls: bool,
    shift: Option<Arc<[f64]>>,
    replaced: Option<Arc<Replacement>>,
    mean_state: Vec<f64>,
    second_moment: Vec<f64>,
    mean_control: Vec<f64>,
}

impl Ensemble {
    /// Builds an ensemble from flat row-major arrays (`states` is len×n,
    /// `controls` is len×q).
    pub fn new(
        time: f64,
        n: usize,
        q: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let len = weights.len();
        if len == 0 {
            return Err(domain("ensemble must contain at least one atom"));
        }
        if n == 0 {
            return Err(domain("state dimension must be positive"));
        }
        if states.len() != len * n || controls.len() != len * q {
            return Err(domain(format!(
                "inconsistent atom arrays: {} weights, {} state coords (n={n}), {} control coords (q={q})",
                len,
                states.len(),
                controls.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(domain("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(domain(format!("weights sum to {total}, expected 1")));
        }
        if states.iter().chain(controls.iter()).any(|v| !v.is_finite()) {
            return Err(domain("atoms must be finite"));
        }
        Ok(Self::from_parts(time, n, q, states, controls, weights))
    }

    /// Equal weights `1/len`.
    pub fn uniform(
        time: f64,
        n: usize,
        q: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || states.is_empty() || states.len() % n != 0 {
            return Err(domain("uniform ensemble needs a nonempty state array"));
        }
        let len = states.len() / n;
        if controls.len() != len * q {
            return Err(domain("control array does not match atom count"));
        }
        if states.iter().chain(controls.iter()).any(|v| !v.is_finite()) {
            return Err(domain("atoms must be finite"));
        }
        let w = 1.0 / len as f64;
        Ok(Self::from_parts(time, n, q, states, controls, vec![w; len]))
    }

    /// Like [`Ensemble::uniform`] but reuses a shared weight vector, which
    /// must hold `1/len` in every entry. Used by simulators to avoid one
    /// weight allocation per frame.
    pub fn uniform_shared(
        time: f64,
        n: usize,
        q: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
        weights: Arc<[f64]>,
    ) -> Result<Self> {
        if n == 0
            || states.len() != weights.len() * n
            || controls.len() != weights.len() * q
            || weights.is_empty()
        {
            return Err(domain("atom arrays do not match the shared weights"));
        }
        Ok(Self::from_parts(time, n, q, states, controls, weights))
    }

    pub fn dirac(time: f64, state: &[f64], control: &[f64]) -> Result<Self> {
        Self::new(
            time,
            state.len(),
            control.len(),
            state.to_vec(),
            control.to_vec(),
            vec![1.0],
        )
    }

    fn from_parts(
        time: f64,
        n: usize,
        q: usize,
        states: Vec<f64>,
        controls: Vec<f64>,
        weights: impl Into<Arc<[f64]>>,
    ) -> Self {
        let weights: Arc<[f64]> = weights.into();
        let mut mean_state = vec![0.0; n];
        let mut second_moment = vec![0.0; n];
        let mut mean_control = vec![0.0; q];
        for (i, &w) in weights.iter().enumerate() {
            for d in 0..n {
                let x = states[i * n + d];
                mean_state[d] += w * x;
                second_moment[d] += w * x * x;
            }
            for d in 0..q {
                mean_control[d] += w * controls[i * q + d];
            }
        }
        let data = AtomData {
            time,
            n,
            q,
            states,
            controls,
            weights,
        };
        Ensemble {
            data: Arc::new(data),
            hide_controls: false,
            shift: None,
            replaced: None,
            mean_state,
            second_moment,
            mean_control,
        }
    }

    pub fn len(&self) -> usize {
        self.data.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self) -> f64 {
        self.data.time
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.data.n
    }

    /// Control dimension q (0 for a state marginal).
    pub fn q(&self) -> usize {
        if self.hide_controls {
            0
        } else {
            self.data.q
        }
    }

    /// Dimension of the ambient space the atoms live in.
    pub fn ambient_dim(&self) -> usize {
        self.n() + self.q()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.data.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.data.weights
    }

    #[inline]
    pub fn state_coord(&self, i: usize, d: usize) -> f64 {
        if let Some(r) = &self.replaced {
            if r.index == i {
                return r.state[d];
            }
        }
        let x = self.data.states[i * self.data.n + d];
        match &self.shift {
            Some(s) => x + s[d],
            None => x,
        }
    }

    pub fn state(&self, i: usize) -> Cow<'_, [f64]> {
        if let Some(r) = &self.replaced {
            if r.index == i {
                return Cow::Borrowed(&r.state);
            }
        }
        let n = self.data.n;
        let base = &self.data.states[i * n..(i + 1) * n];
        match &self.shift {
            Some(s) => Cow::Owned(base.iter().zip(s.iter()).map(|(x, d)| x + d).collect()),
            None => Cow::Borrowed(base),
        }
    }

    /// Control of atom `i`; empty for a state marginal.
    pub fn control(&self, i: usize) -> &[f64] {
        if self.hide_controls {
            return &[];
        }
        if let Some(r) = &self.replaced {
            if r.index == i {
                return &r.control;
            }
        }
        let q = self.data.q;
        &self.data.controls[i * q..(i + 1) * q]
    }

    /// Coordinate `d` of the joint point (x, u) of atom `i`.
    #[inline]
    pub fn joint_coord(&self, i: usize, d: usize) -> f64 {
        let n = self.data.n;
        if d < n {
            self.state_coord(i, d)
        } else {
            self.control(i)[d - n]
        }
    }

    pub fn mean_state(&self) -> &[f64] {
        &self.mean_state
    }

    /// Per-coordinate second moments E[x_d²].
    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn variance_state(&self) -> Vec<f64> {
        self.mean_state
            .iter()
            .zip(&self.second_moment)
            .map(|(m, s)| (s - m * m).max(0.0))
            .collect()
    }

    pub fn mean_control(&self) -> &[f64] {
        if self.hide_controls {
            &[]
        } else {
            &self.mean_control
        }
    }

    /// The state marginal: same atoms and weights, controls dropped.
    pub fn state_marginal(&self) -> Ensemble {
        let mut e = self.clone();
        e.hide_controls = true;
        e
    }

    pub fn is_state_marginal(&self) -> bool {
        self.hide_controls || self.data.q == 0
    }

    /// Push-forward by `x ↦ x + delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Ensemble> {
        let n = self.n();
        if delta.len() != n {
            return Err(domain(format!(
                "shift has dimension {}, expected {n}",
                delta.len()
            )));
        }
        let mut e = self.clone();
        let new_shift: Vec<f64> = match &self.shift {
            Some(s) => s.iter().zip(delta).map(|(a, b)| a + b).collect(),
            None => delta.to_vec(),
        };
        for d in 0..n {
            let m = e.mean_state[d];
            e.second_moment[d] += 2.0 * delta[d] * m + delta[d] * delta[d];
            e.mean_state[d] = m + delta[d];
        }
        if let Some(r) = &self.replaced {
            e.replaced = Some(Arc::new(Replacement {
                index: r.index,
                state: r.state.iter().zip(delta).map(|(a, b)| a + b).collect(),
                control: r.control.clone(),
            }));
        }
        e.shift = Some(new_shift.into());
        Ok(e)
    }

    /// Same ensemble with atom `index` moved to `(state, control)`, weight kept.
    pub fn with_replaced(&self, index: usize, state: &[f64], control: &[f64]) -> Ensemble {
        debug_assert_eq!(state.len(), self.n());
        debug_assert_eq!(control.len(), self.data.q);
        let w = self.weight(index);
        let mut e = self.clone();
        for d in 0..self.n() {
            let old = self.state_coord(index, d);
            e.mean_state[d] += w * (state[d] - old);
            e.second_moment[d] += w * (state[d] * state[d] - old * old);
        }
        if !self.hide_controls {
            let old_u = self.control(index).to_vec();
            for d in 0..self.data.q {
                e.mean_control[d] += w * (control[d] - old_u[d]);
            }
        } else {
            // keep the hidden control moments consistent for a later un-hide
            let q = self.data.q;
            let old_u = match &self.replaced {
                Some(r) if r.index == index => r.control.clone(),
                _ => self.data.controls[index * q..(index + 1) * q].to_vec(),
            };
            for d in 0..q {
                e.mean_control[d] += w * (control[d] - old_u[d]);
            }
        }
        e.replaced = Some(Arc::new(Replacement {
            index,
            state: state.to_vec(),
            control: control.to_vec(),
        }));
        e
    }

    /// Fails unless every control is a point of `grid`.
    pub fn check_controls(&self, grid: &ControlGrid) -> Result<()> {
        if self.q() == 0 {
            return Ok(());
        }
        if grid.dim() != self.q() {
            return Err(domain("control grid dimension mismatch"));
        }
        for i in 0..self.len() {
            if grid.index_of(self.control(i)).is_none() {
                return Err(domain(format!(
                    "atom {i} has control {:?} outside the control grid",
                    self.control(i)
                )));
            }
        }
        Ok(())
    }

    /// Materialized copies of the atom arrays.
    pub fn to_arrays(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, q) = (self.n(), self.q());
        let mut xs = Vec::with_capacity(self.len() * n);
        let mut us = Vec::with_capacity(self.len() * q);
        for i in 0..self.len() {
            for d in 0..n {
                xs.push(self.state_coord(i, d));
            }
            us.extend_from_slice(self.control(i));
        }
        (xs, us, self.data.weights.to_vec())
    }

    /// Values of state coordinate `d`.
    pub fn state_coordinate(&self, d: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.state_coord(i, d)).collect()
    }

    /// Projection of the joint points onto `direction` (length n + q).
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        let dim = self.ambient_dim();
        (0..self.len())
            .map(|i| {
                (0..dim)
                    .map(|d| direction[d] * self.joint_coord(i, d))
                    .sum()
            })
            .collect()
    }

    /// Atom-wise bitwise equality of the materialized point sets.
    pub fn same_atoms(&self, other: &Ensemble) -> bool {
        if self.len() != other.len() || self.n() != other.n() || self.q() != other.q() {
            return false;
        }
        let (a, b) = (self.to_arrays(), other.to_arrays());
        let eq = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
        eq(&a.0, &b.0) && eq(&a.1, &b.1) && eq(&a.2, &b.2)
    }

    /// Same atoms, different time stamp.
    pub fn with_time(&self, time: f64) -> Ensemble {
        let (xs, us, ws) = self.to_arrays();
        let mut e = Self::from_parts(time, self.n(), self.q(), xs, us, ws);
        e.hide_controls = false;
        e
    }
}

/// One ensemble per node of a time grid.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    grid: TimeGrid,
    frames: Vec<Ensemble>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, frames: Vec<Ensemble>) -> Result<Self> {
        if frames.len() != grid.steps() + 1 {
            return Err(domain(format!(
                "flow has {} frames for a grid with {} nodes",
                frames.len(),
                grid.steps() + 1
            )));
        }
        for (k, f) in frames.iter().enumerate() {
            if f.time() != grid.time(k) {
                return Err(domain(format!(
                    "frame {k} stamped {} but grid node is {}",
                    f.time(),
                    grid.time(k)
                )));
            }
            if f.n() != frames[0].n() || f.q() != frames[0].q() {
                return Err(domain("frames disagree on dimensions"));
            }
        }
        Ok(MeasureFlow { grid, frames })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn frames(&self) -> &[Ensemble] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Ensemble {
        &self.frames[k]
    }

    pub fn n(&self) -> usize {
        self.frames[0].n()
    }

    pub fn q(&self) -> usize {
        self.frames[0].q()
    }

    /// State means of all frames.
    pub fn state_means(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.mean_state().to_vec())
            .collect()
    }

    /// Flow of state marginals.
    pub fn state_marginals(&self) -> MeasureFlow {
        MeasureFlow {
            grid: self.grid.clone(),
            frames: self.frames.iter().map(|f| f.state_marginal()).collect(),
        }
    }

    /// Replaces frame `k` (test and corruption experiments).
    pub fn with_frame(&self, k: usize, frame: Ensemble) -> Result<MeasureFlow> {
        let mut frames = self.frames.clone();
        frames[k] = frame;
        MeasureFlow::new(self.grid.clone(), frames)
    }
}

/// Push-forward of every frame by `x ↦ x + sign·σ0·b(t_k)`.
///
/// Shifts compose lazily, so a round trip with the opposite sign restores
/// the original atoms bit for bit.
pub fn shift_flow(
    flow: &MeasureFlow,
    path: &NoisePath,
    sign: f64,
    sigma0: &[f64],
) -> Result<MeasureFlow> {
    let n = flow.n();
    if path.dim() != n {
        return Err(domain("noise path dimension differs from state dimension"));
    }
    if path.len() != flow.grid().steps() + 1 {
        return Err(domain("noise path and flow use different grids"));
    }
    if sigma0.len() != n * n {
        return Err(domain("sigma0 must be an n×n matrix"));
    }
    crate::model::check_invertible(sigma0, n)?;
    let frames = flow
        .frames()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let b: Vec<f64> = path.value(k).iter().map(|v| sign * v).collect();
            let delta: Vec<f64> = (0..n)
                .map(|r| (0..n).map(|c| sigma0[r * n + c] * b[c]).sum())
                .collect();
            f.shifted(&delta)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(flow.grid().clone(), frames)
}

/// A common-noise path together with the conditional flow it produced.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub noise: NoisePath,
    pub flow: MeasureFlow,
}

/// Equally weighted scenarios standing in for a law on (noise path, flow).
#[derive(Debug, Clone)]
pub struct ScenarioEnsemble {
    scenarios: Vec<Scenario>,
}

impl ScenarioEnsemble {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(domain("scenario ensemble must not be empty"));
        }
        let g = scenarios[0].flow.grid().clone();
        for s in &scenarios {
            if *s.flow.grid() != g {
                return Err(domain("scenarios must share one time grid"));
            }
            if s.noise.len() != g.steps() + 1 {
                return Err(domain("noise path length does not match the grid"));
            }
        }
        Ok(ScenarioEnsemble { scenarios })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.scenarios[0].flow.grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(time: f64, xs: &[f64]) -> Ensemble {
        Ensemble::uniform(time, 1, 0, xs.to_vec(), vec![]).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(Ensemble::new(0.0, 1, 0, vec![0.0, 1.0], vec![], vec![0.5, 0.6]).is_err());
        assert!(Ensemble::new(0.0, 1, 0, vec![0.0, 1.0], vec![], vec![1.5, -0.5]).is_err());
        assert!(Ensemble::new(0.0, 1, 0, vec![], vec![], vec![]).is_err());
        assert!(Ensemble::new(0.0, 1, 0, vec![0.0, 1.0], vec![], vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn marginal_keeps_atoms_and_weights() {
        let e =
            Ensemble::new(0.0, 1, 1, vec![1.0, 2.0], vec![0.5, -0.5], vec![0.25, 0.75]).unwrap();
        let m = e.state_marginal();
        assert_eq!(m.q(), 0);
        assert_eq!(m.weights(), e.weights());
        assert_eq!(m.state_coordinate(0), e.state_coordinate(0));
        assert!(m.control(0).is_empty());
    }

    #[test]
    fn lazy_moments_match_materialized() {
        let e = Ensemble::new(
            0.0,
            1,
            1,
            vec![1.0, 2.0, 4.0],
            vec![0.0, 1.0, 1.0],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap();
        let t = e.shifted(&[0.5]).unwrap().with_replaced(1, &[-3.0], &[0.0]);
        let (xs, us, ws) = t.to_arrays();
        let fresh = Ensemble::new(0.0, 1, 1, xs, us, ws).unwrap();
        assert!((fresh.mean_state()[0] - t.mean_state()[0]).abs() < 1e-14);
        assert!((fresh.second_moment()[0] - t.second_moment()[0]).abs() < 1e-13);
        assert!((fresh.mean_control()[0] - t.mean_control()[0]).abs() < 1e-14);
    }

    #[test]
    fn round_trip_shift_is_exact() {
        let e = line(0.0, &[0.1, 0.7, -3.3]);
        let back = e.shifted(&[0.3]).unwrap().shifted(&[-0.3]).unwrap();
        assert!(back.same_atoms(&e));
    }

    #[test]
    fn flow_requires_matching_stamps() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let frames = vec![line(0.0, &[0.0]), line(0.5, &[0.0]), line(1.0, &[0.0])];
        assert!(MeasureFlow::new(g.clone(), frames).is_ok());
        let bad = vec![line(0.0, &[0.0]), line(0.4, &[0.0]), line(1.0, &[0.0])];
        assert!(MeasureFlow::new(g, bad).is_err());
    }

    #[test]
    fn controls_checked_against_grid() {
        let grid = ControlGrid::uniform_1d(-1.0, 1.0, 3).unwrap();
        let ok = Ensemble::uniform(0.0, 1, 1, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(ok.check_controls(&grid).is_ok());
        let bad = Ensemble::uniform(0.0, 1, 1, vec![0.0, 1.0], vec![0.0, 0.5]).unwrap();
        assert!(bad.check_controls(&grid).is_err());
    }
}
