//! Dynamic-programming environments built from frozen scenario flows.

use crate::dp::DpEnvironment;
use crate::error::{domain, Result};
use crate::interp::Axis;
use crate::measures::{Ensemble, ScenarioEnsemble};
use crate::model::{ModelSpec, TimeGrid};
use crate::policy::MeasureFeatures;

/// Mean drift ∫ b dν̄ of one frame.
pub(crate) fn mean_drift(spec: &ModelSpec, t: f64, frame: &Ensemble) -> f64 {
    let mut bs = [0.0];
    (spec.b_star)(t, frame, &mut bs);
    let mut bc = [0.0];
    let mut acc = 0.0;
    for a in 0..frame.len() {
        (spec.b_circ)(t, &frame.state(a), frame.control(a), &mut bc);
        acc += frame.weight(a) * bc[0];
    }
    bs[0] + acc
}

/// Least-squares line through (m_s, y_s); flat when the m_s coincide.
pub(crate) fn fit_line(ms: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = ms.len() as f64;
    let mm = ms.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = ms.iter().map(|m| (m - mm) * (m - mm)).sum();
    let sxy: f64 = ms.iter().zip(ys).map(|(m, y)| (m - mm) * (y - my)).sum();
    if sxx <= 1e-14 * (1.0 + mm * mm) * n {
        return (my, 0.0);
    }
    let slope = sxy / sxx;
    (my - slope * mm, slope)
}

/// Axis covering `values` padded by 10% of their range plus `extra`.
pub(crate) fn padded_axis(values: &[f64], extra: f64, count: usize) -> Result<Axis> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo) + extra;
    if !(pad > 0.0) || count <= 1 {
        return Ok(Axis::single(0.5 * (lo + hi)));
    }
    Axis::new(lo - pad, hi + pad, count)
}

/// State axis spanning six standard deviations around every frame.
pub fn default_state_axis(frozen: &ScenarioEnsemble, count: usize) -> Result<Axis> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in frozen.scenarios() {
        for f in s.flow.frames() {
            let m = f.mean_state()[0];
            let sd = f.variance_state()[0].sqrt();
            lo = lo.min(m - 6.0 * sd);
            hi = hi.max(m + 6.0 * sd);
        }
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    Axis::new(lo, hi, count)
}

/// The player faces the frozen flows through their conditional mean: a
/// regression of the mean drift on the mean across scenarios, and the
/// nearest scenario's frame translated to each mean node.
pub struct FrozenEnvironment {
    grid: TimeGrid,
    axes: Vec<Axis>,
    lines: Vec<(f64, f64)>,
    reps: Vec<Vec<Ensemble>>,
    dt: f64,
}

impl FrozenEnvironment {
    pub fn new(spec: &ModelSpec, frozen: &ScenarioEnsemble, m_count: usize) -> Result<Self> {
        if spec.n != 1 {
            return Err(domain(
                "frozen-flow environment needs one-dimensional states",
            ));
        }
        let grid = frozen.grid().clone();
        let dt = grid.dt();
        let extra = 3.0 * spec.sigma0[0].abs() * dt.sqrt();
        let mut axes = Vec::new();
        let mut lines = Vec::new();
        let mut reps = Vec::new();
        for k in 0..=grid.steps() {
            let t = grid.time(k);
            let frames: Vec<&Ensemble> =
                frozen.scenarios().iter().map(|s| s.flow.frame(k)).collect();
            let ms: Vec<f64> = frames.iter().map(|f| f.mean_state()[0]).collect();
            let ys: Vec<f64> = frames.iter().map(|f| mean_drift(spec, t, f)).collect();
            let axis = padded_axis(&ms, extra, m_count)?;
            lines.push(fit_line(&ms, &ys));
            let row = (0..axis.count)
                .map(|j| {
                    let target = axis.node(j);
                    let s = nearest(&ms, target);
                    if target == ms[s] {
                        Ok(frames[s].clone())
                    } else {
                        frames[s].shifted(&[target - ms[s]])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            axes.push(axis);
            reps.push(row);
        }
        Ok(FrozenEnvironment {
            grid,
            axes,
            lines,
            reps,
            dt,
        })
    }
}

pub(crate) fn nearest(values: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (s, v) in values.iter().enumerate() {
        if (v - target).abs() < (values[best] - target).abs() {
            best = s;
        }
    }
    best
}

impl DpEnvironment for FrozenEnvironment {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn m_axis(&self, k: usize) -> Axis {
        self.axes[k]
    }

    fn m_next(&self, k: usize, m: f64) -> f64 {
        let (a, b) = self.lines[k];
        m + (a + b * m) * self.dt
    }

    fn m_extra_sd(&self, _: usize) -> f64 {
        0.0
    }

    fn common_noise_random(&self) -> bool {
        true
    }

    fn measure(&self, k: usize, j: usize) -> &Ensemble {
        &self.reps[k][j]
    }

    fn features(&self, k: usize, j: usize, _: f64) -> MeasureFeatures {
        MeasureFeatures::of(&self.reps[k][j])
    }
}

/// One scenario with its common-noise increments known: the clairvoyant
/// per-scenario problem.
pub struct ScenarioEnvironment<'a> {
    grid: TimeGrid,
    scenario: usize,
    frames: Vec<&'a Ensemble>,
    shifts: Vec<f64>,
}

impl<'a> ScenarioEnvironment<'a> {
    pub fn new(spec: &ModelSpec, frozen: &'a ScenarioEnsemble, scenario: usize) -> Self {
        let s = &frozen.scenarios()[scenario];
        let grid = frozen.grid().clone();
        let shifts = (0..grid.steps())
            .map(|k| spec.sigma0[0] * s.noise.increment(k, 0))
            .collect();
        ScenarioEnvironment {
            grid,
            scenario,
            frames: s.flow.frames().iter().collect(),
            shifts,
        }
    }
}

impl DpEnvironment for ScenarioEnvironment<'_> {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn m_axis(&self, k: usize) -> Axis {
        Axis::single(self.frames[k].mean_state()[0])
    }

    fn m_next(&self, k: usize, _: f64) -> f64 {
        self.frames[k + 1].mean_state()[0]
    }

    fn m_extra_sd(&self, _: usize) -> f64 {
        0.0
    }

    fn common_noise_random(&self) -> bool {
        false
    }

    fn x_common_shift(&self, k: usize) -> f64 {
        self.shifts[k]
    }

    fn measure(&self, k: usize, _: usize) -> &Ensemble {
        self.frames[k]
    }

    fn features(&self, k: usize, _: usize, _: f64) -> MeasureFeatures {
        MeasureFeatures::of(self.frames[k]).with_scenario(self.scenario)
    }
}
