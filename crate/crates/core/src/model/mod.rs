//! Problem coefficients, grids and the common-noise path.
//!
//! Drift and running reward are stored as their two separable parts
//! (b* + b°, L* + L°), so the separability structure cannot be violated.
//! All rewards are maximized.

pub mod catalog;
mod validate;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};
use crate::measures::Ensemble;
use crate::rng::{normal, stream, Domain, StreamRng};

pub use validate::{validate_model, Check, ValidationReport};

/// Uniform grid `t_k = T·k/K`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(domain("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Index of the last node `<= t` (clamped to the grid).
    pub fn node_at_or_before(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let k = ((t / self.horizon) * self.steps as f64).floor() as usize;
        let mut k = k.min(self.steps);
        // guard against rounding in the division above
        while k > 0 && self.time(k) > t {
            k -= 1;
        }
        while k < self.steps && self.time(k + 1) <= t {
            k += 1;
        }
        k
    }
}

/// Finite control set U ⊂ ℝ^q, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    dim: usize,
    points: Vec<f64>,
    /// 1-D and strictly increasing: nearest-point queries use bisection.
    increasing: bool,
}

impl ControlGrid {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(domain(
                "control grid needs at least one point of positive dimension",
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(domain("control grid points must be finite"));
        }
        let increasing = dim == 1 && points.windows(2).all(|w| w[0] < w[1]);
        Ok(ControlGrid {
            dim,
            points,
            increasing,
        })
    }

    /// `count` equally spaced points on `[lo, hi]`.
    pub fn uniform_1d(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(hi >= lo) {
            return Err(domain("bad uniform control grid"));
        }
        if count == 1 {
            return Self::new(1, vec![lo]);
        }
        let pts = (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect();
        Self::new(1, pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of an exact grid point.
    pub fn index_of(&self, u: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&i| self.point(i) == u)
    }

    /// Nearest grid point in Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, u: &[f64]) -> usize {
        if self.increasing {
            let v = u[0];
            let pos = self.points.partition_point(|p| *p < v);
            if pos == 0 {
                return 0;
            }
            if pos == self.points.len() {
                return pos - 1;
            }
            return if (v - self.points[pos - 1]).abs() <= (self.points[pos] - v).abs() {
                pos - 1
            } else {
                pos
            };
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d: f64 = self
                .point(i)
                .iter()
                .zip(u)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Largest Euclidean norm over the grid.
    pub fn max_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Values of the common noise B at the nodes of a grid, B_0 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl NoisePath {
    pub fn zero(grid: &TimeGrid, dim: usize) -> Self {
        NoisePath {
            grid: grid.clone(),
            dim,
            values: vec![0.0; (grid.steps() + 1) * dim],
        }
    }

    /// Path from explicit node values (row k = B(t_k)); the first row must be 0.
    pub fn from_values(grid: &TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != (grid.steps() + 1) * dim {
            return Err(domain("noise path length does not match the grid"));
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(domain("noise path must start at 0"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("noise path must be finite"));
        }
        Ok(NoisePath {
            grid: grid.clone(),
            dim,
            values,
        })
    }

    /// Path `t ↦ f(t)` evaluated at the nodes.
    pub fn from_fn(grid: &TimeGrid, dim: usize, f: impl Fn(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; (grid.steps() + 1) * dim];
        for k in 0..=grid.steps() {
            f(grid.time(k), &mut values[k * dim..(k + 1) * dim]);
        }
        Self::from_values(grid, dim, values)
    }

    /// Brownian path with N(0, Δt) increments; `tag` selects the scenario.
    pub fn sample(grid: &TimeGrid, dim: usize, seed: u64, tag: u64) -> Self {
        let mut rng = stream(seed, Domain::Common, &[tag]);
        let sd = grid.dt().sqrt();
        let mut values = vec![0.0; (grid.steps() + 1) * dim];
        for k in 1..=grid.steps() {
            for d in 0..dim {
                values[k * dim + d] = values[(k - 1) * dim + d] + sd * normal(&mut rng);
            }
        }
        NoisePath {
            grid: grid.clone(),
            dim,
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// B(t_{k+1}) − B(t_k) for coordinate `d`.
    #[inline]
    pub fn increment(&self, k: usize, d: usize) -> f64 {
        self.values[(k + 1) * self.dim + d] - self.values[k * self.dim + d]
    }

    /// First-coordinate values.
    pub fn first_coordinate(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.values[k * self.dim]).collect()
    }
}

pub type MeanDrift = Arc<dyn Fn(f64, &Ensemble, &mut [f64]) + Send + Sync>;
pub type ControlDrift = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type Volatility = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type MeasureReward = Arc<dyn Fn(f64, &[f64], &Ensemble) -> f64 + Send + Sync>;
pub type ControlReward = Arc<dyn Fn(f64, &[f64], &Ensemble, &[f64]) -> f64 + Send + Sync>;
pub type TerminalReward = Arc<dyn Fn(&[f64], &Ensemble) -> f64 + Send + Sync>;
pub type NoiseDrift = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&mut StreamRng, &mut [f64]) + Send + Sync>;

/// Law ν of the initial state.
#[derive(Clone)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    /// Independent coordinates N(mean_d, sd²).
    Normal {
        mean: Vec<f64>,
        sd: f64,
    },
    /// User sampler; must have finite moments of order above max(p, n).
    Custom(Sampler),
}

impl fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialLaw::Dirac(x) => write!(f, "Dirac({x:?})"),
            InitialLaw::Normal { mean, sd } => write!(f, "Normal(mean={mean:?}, sd={sd})"),
            InitialLaw::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl InitialLaw {
    pub fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac(x) => out.copy_from_slice(x),
            InitialLaw::Normal { mean, sd } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + sd * normal(rng);
                }
            }
            InitialLaw::Custom(s) => s(rng, out),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, InitialLaw::Dirac(_))
    }
}

/// Declared sup-norm bounds and Lipschitz constants, checked by sampling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bounds {
    pub drift_sup: Option<f64>,
    pub sigma_sup: Option<f64>,
    pub reward_sup: Option<f64>,
    pub drift_lipschitz: Option<f64>,
    pub sigma_lipschitz: Option<f64>,
}

/// A drift term reading the common noise frozen at every `stride`-th node.
#[derive(Clone)]
pub struct NoiseFeedback {
    pub stride: usize,
    pub drift: NoiseDrift,
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub q: usize,
    pub horizon: f64,
    pub p: f64,
    pub controls: ControlGrid,
    pub initial: InitialLaw,
    pub b_star: MeanDrift,
    pub b_circ: ControlDrift,
    pub sigma: Volatility,
    pub sigma0: Vec<f64>,
    pub l_star: MeasureReward,
    pub l_circ: ControlReward,
    pub g: TerminalReward,
    pub noise_feedback: Option<NoiseFeedback>,
    pub bounds: Bounds,
    /// b* ≡ 0 declared, lets simulators skip the measure term.
    pub mean_drift_free: bool,
    /// L*, L°, g and b* do not read the measure.
    pub decoupled: bool,
    /// σ does not depend on (t, x).
    pub constant_sigma: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("q", &self.q)
            .field("horizon", &self.horizon)
            .field("p", &self.p)
            .field("controls", &self.controls.len())
            .field("initial", &self.initial)
            .field("sigma0", &self.sigma0)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Model with zero drift and rewards, identity volatilities and ξ = 0.
    pub fn new(name: &str, n: usize, horizon: f64, controls: ControlGrid) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model("state dimension must be positive".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Model("horizon must be positive".into()));
        }
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let sig = eye.clone();
        Ok(ModelSpec {
            name: name.to_string(),
            n,
            q: controls.dim(),
            horizon,
            p: 2.0,
            controls,
            initial: InitialLaw::Dirac(vec![0.0; n]),
            b_star: Arc::new(|_, _, out| out.fill(0.0)),
            b_circ: Arc::new(|_, _, _, out| out.fill(0.0)),
            sigma: Arc::new(move |_, _, out| out.copy_from_slice(&sig)),
            sigma0: eye,
            l_star: Arc::new(|_, _, _| 0.0),
            l_circ: Arc::new(|_, _, _, _| 0.0),
            g: Arc::new(|_, _| 0.0),
            noise_feedback: None,
            bounds: Bounds::default(),
            mean_drift_free: true,
            decoupled: true,
            constant_sigma: true,
        })
    }

    pub fn with_b_star(
        mut self,
        f: impl Fn(f64, &Ensemble, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.b_star = Arc::new(f);
        self.mean_drift_free = false;
        self.decoupled = false;
        self
    }

    pub fn with_b_circ(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.b_circ = Arc::new(f);
        self
    }

    pub fn with_sigma(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Arc::new(f);
        self.constant_sigma = false;
        self
    }

    /// Constant volatility matrix (row-major n×n).
    pub fn with_constant_sigma(mut self, m: Vec<f64>) -> Self {
        self.sigma = Arc::new(move |_, _, out| out.copy_from_slice(&m));
        self.constant_sigma = true;
        self
    }

    pub fn with_sigma0(mut self, m: Vec<f64>) -> Self {
        self.sigma0 = m;
        self
    }

    pub fn with_l_star(
        mut self,
        f: impl Fn(f64, &[f64], &Ensemble) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.l_star = Arc::new(f);
        self.decoupled = false;
        self
    }

    pub fn with_l_circ(
        mut self,
        f: impl Fn(f64, &[f64], &Ensemble, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.l_circ = Arc::new(f);
        self
    }

    pub fn with_g(mut self, f: impl Fn(&[f64], &Ensemble) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Arc::new(f);
        self
    }

    pub fn with_initial(mut self, law: InitialLaw) -> Self {
        self.initial = law;
        self
    }

    pub fn with_noise_feedback(
        mut self,
        stride: usize,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.noise_feedback = Some(NoiseFeedback {
            stride: stride.max(1),
            drift: Arc::new(f),
        });
        self
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_order(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    /// Declares that rewards and drift ignore the measure argument even
    /// though custom closures were installed.
    pub fn declare_decoupled(mut self, decoupled: bool) -> Self {
        self.decoupled = decoupled;
        self
    }

    /// Structural checks plus invertibility of σ0.
    pub fn check(&self) -> Result<()> {
        self.check_shape()?;
        check_invertible(&self.sigma0, self.n)
    }

    /// Dimensions and order only. Simulation accepts a degenerate σ0 (for
    /// instance σ0 = 0); noise recovery and validation do not.
    pub fn check_shape(&self) -> Result<()> {
        if self.q != self.controls.dim() {
            return Err(Error::Model(
                "control dimension differs from control grid".into(),
            ));
        }
        if self.p < 1.0 {
            return Err(Error::Model(format!(
                "Wasserstein order must be >= 1, got {}",
                self.p
            )));
        }
        if self.sigma0.len() != self.n * self.n {
            return Err(Error::Model("sigma0 must be n×n".into()));
        }
        if let InitialLaw::Dirac(x) | InitialLaw::Normal { mean: x, .. } = &self.initial {
            if x.len() != self.n {
                return Err(Error::Model("initial law has the wrong dimension".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, steps)
    }

    /// σ0^{-1}, row-major.
    pub fn sigma0_inverse(&self) -> Result<Vec<f64>> {
        invert(&self.sigma0, self.n)
    }

    pub fn sigma0_is_zero(&self) -> bool {
        self.sigma0.iter().all(|v| *v == 0.0)
    }
}

/// |det| below this counts as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

pub fn check_invertible(m: &[f64], n: usize) -> Result<()> {
    let det = DMatrix::from_row_slice(n, n, m).determinant();
    if !(det.abs() > SINGULAR_TOL) {
        return Err(Error::SingularNoise { det });
    }
    Ok(())
}

pub fn invert(m: &[f64], n: usize) -> Result<Vec<f64>> {
    check_invertible(m, n)?;
    let inv = DMatrix::from_row_slice(n, n, m)
        .try_inverse()
        .ok_or(Error::SingularNoise { det: 0.0 })?;
    Ok((0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| inv[(r, c)])
        .collect())
}

/// b(t, x, ν̄, u) = b*(t, ν̄) + b°(t, x, u).
pub fn eval_drift(spec: &ModelSpec, t: f64, x: &[f64], nu_bar: &Ensemble, u: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; spec.n];
    let mut b = vec![0.0; spec.n];
    (spec.b_star)(t, nu_bar, &mut a);
    (spec.b_circ)(t, x, u, &mut b);
    a.iter().zip(&b).map(|(p, q)| p + q).collect()
}

/// L(t, x, ν̄, u) = L*(t, x, ν̄) + L°(t, x, ν, u) with ν the state marginal of ν̄.
pub fn eval_running_cost(spec: &ModelSpec, t: f64, x: &[f64], nu_bar: &Ensemble, u: &[f64]) -> f64 {
    (spec.l_star)(t, x, nu_bar) + (spec.l_circ)(t, x, &nu_bar.state_marginal(), u)
}

pub fn eval_terminal(spec: &ModelSpec, x: &[f64], nu: &Ensemble) -> f64 {
    (spec.g)(x, &nu.state_marginal())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_exact() {
        let g = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(7), 0.3);
        assert_eq!(g.dt(), 0.3 / 7.0);
        for k in 0..=7 {
            assert_eq!(g.node_at_or_before(g.time(k)), k);
        }
    }

    #[test]
    fn control_grid_lookup() {
        let u = ControlGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        assert_eq!(u.index_of(&[0.5]), Some(3));
        assert_eq!(u.index_of(&[0.4]), None);
        assert_eq!(u.nearest(&[0.74]), 3);
        // equidistant between -0.5 and 0: lowest index wins
        assert_eq!(u.nearest(&[-0.25]), 1);
        let unsorted = ControlGrid::new(1, vec![0.0, -0.5, 1.0]).unwrap();
        assert_eq!(unsorted.nearest(&[-0.25]), 0);
        for k in 0..200 {
            let v = -1.3 + 2.6 * k as f64 / 199.0;
            let slow = (0..u.len())
                .min_by(|&a, &b| {
                    (u.point(a)[0] - v)
                        .abs()
                        .partial_cmp(&(u.point(b)[0] - v).abs())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(u.nearest(&[v]), slow);
        }
    }

    #[test]
    fn noise_path_starts_at_zero() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let b = NoisePath::sample(&g, 1, 3, 0);
        assert_eq!(b.value(0), &[0.0]);
        assert_eq!(b, NoisePath::sample(&g, 1, 3, 0));
        assert_ne!(b, NoisePath::sample(&g, 1, 3, 1));
        assert!(NoisePath::from_values(&g, 1, vec![1.0; 11]).is_err());
    }

    #[test]
    fn singular_sigma0_rejected() {
        assert!(matches!(
            check_invertible(&[0.0], 1),
            Err(Error::SingularNoise { .. })
        ));
        assert!(check_invertible(&[1.0, 2.0, 2.0, 4.0], 2).is_err());
        let inv = invert(&[2.0, 0.0, 0.0, 4.0], 2).unwrap();
        assert_eq!(inv, vec![0.5, 0.0, 0.0, 0.25]);
    }
}
