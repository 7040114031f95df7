//! Feedback policies over (time, state, measure features).

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::interp::{linear_2d, Axis};
use crate::measures::Ensemble;
use crate::model::ControlGrid;

/// Finite-dimensional summary of the current state law handed to policies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasureFeatures {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Set only inside scenario-indexed solvers.
    pub scenario: Option<usize>,
}

impl MeasureFeatures {
    pub fn of(e: &Ensemble) -> Self {
        MeasureFeatures {
            mean: e.mean_state().to_vec(),
            second_moment: e.second_moment().to_vec(),
            scenario: None,
        }
    }

    /// Features of the empirical measure of `states` (len × n). The sums run
    /// over sorted coordinates, so the result does not depend on the order
    /// of the points.
    pub fn of_points(states: &[f64], n: usize) -> Self {
        let len = states.len() / n;
        let mut mean = vec![0.0; n];
        let mut second = vec![0.0; n];
        let mut col = Vec::with_capacity(len);
        for d in 0..n {
            col.clear();
            col.extend((0..len).map(|i| states[i * n + d]));
            col.sort_unstable_by(f64::total_cmp);
            mean[d] = col.iter().sum::<f64>() / len as f64;
            second[d] = col.iter().map(|x| x * x).sum::<f64>() / len as f64;
        }
        MeasureFeatures {
            mean,
            second_moment: second,
            scenario: None,
        }
    }

    pub fn with_scenario(mut self, s: usize) -> Self {
        self.scenario = Some(s);
        self
    }
}

/// A Markov feedback α(t, x, μ) returning a control-grid index.
pub trait MarkovPolicy: Send + Sync + fmt::Debug {
    fn control_index(&self, step: usize, t: f64, x: &[f64], features: &MeasureFeatures) -> usize;

    /// True when the policy needs `MeasureFeatures::scenario`, which makes
    /// it impossible to lift to a finite-player game.
    fn reads_scenario(&self) -> bool {
        false
    }
}

/// Always the same control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub usize);

impl MarkovPolicy for ConstantPolicy {
    fn control_index(&self, _: usize, _: f64, _: &[f64], _: &MeasureFeatures) -> usize {
        self.0
    }
}

type PolicyFn = dyn Fn(usize, f64, &[f64], &MeasureFeatures) -> usize + Send + Sync;

/// Policy backed by a closure.
#[derive(Clone)]
pub struct FnPolicy {
    f: Arc<PolicyFn>,
    scenario: bool,
}

impl FnPolicy {
    pub fn new(
        f: impl Fn(usize, f64, &[f64], &MeasureFeatures) -> usize + Send + Sync + 'static,
    ) -> Self {
        FnPolicy {
            f: Arc::new(f),
            scenario: false,
        }
    }

    /// Marks the closure as reading the scenario index.
    pub fn scenario_dependent(mut self) -> Self {
        self.scenario = true;
        self
    }
}

impl fmt::Debug for FnPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnPolicy")
    }
}

impl MarkovPolicy for FnPolicy {
    fn control_index(&self, step: usize, t: f64, x: &[f64], features: &MeasureFeatures) -> usize {
        (self.f)(step, t, x, features)
    }

    fn reads_scenario(&self) -> bool {
        self.scenario
    }
}

/// Tabulated feedback over (t_k, x, m) with m the mean of the state law.
///
/// Lookups interpolate the stored control values linearly in time (a query
/// at a node uses that node only) and bilinearly in (x, m), clamping outside
/// the axes, then project to the nearest grid control (ties to the lowest
/// index). Only one-dimensional states are supported.
#[derive(Debug, Clone, Serialize)]
pub struct FeedbackTable {
    pub times: Vec<f64>,
    pub x_axis: Axis,
    /// One mean axis per time node.
    pub m_axes: Vec<Axis>,
    #[serde(skip)]
    pub controls: ControlGrid,
    /// Control values indexed `[k][i][j][d]`, flattened.
    pub values: Vec<f64>,
}

impl FeedbackTable {
    pub fn new(
        times: Vec<f64>,
        x_axis: Axis,
        m_axes: Vec<Axis>,
        controls: ControlGrid,
        values: Vec<f64>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != m_axes.len() {
            return Err(domain("feedback table needs one mean axis per time node"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain("feedback table times must increase"));
        }
        let q = controls.dim();
        let size: usize = m_axes.iter().map(|a| x_axis.count * a.count * q).sum();
        if values.len() != size {
            return Err(domain(format!(
                "feedback table has {} values, expected {size}",
                values.len()
            )));
        }
        Ok(FeedbackTable {
            times,
            x_axis,
            m_axes,
            controls,
            values,
        })
    }

    /// Table filled with one control index everywhere.
    pub fn constant(
        times: Vec<f64>,
        x_axis: Axis,
        m_axes: Vec<Axis>,
        controls: ControlGrid,
        index: usize,
    ) -> Result<Self> {
        let u = controls.point(index).to_vec();
        let cells: usize = m_axes.iter().map(|a| x_axis.count * a.count).sum();
        let values = (0..cells).flat_map(|_| u.iter().copied()).collect();
        Self::new(times, x_axis, m_axes, controls, values)
    }

    fn offset(&self, k: usize) -> usize {
        let q = self.controls.dim();
        self.m_axes[..k]
            .iter()
            .map(|a| self.x_axis.count * a.count * q)
            .sum()
    }

    pub fn cell_value(&self, k: usize, i: usize, j: usize) -> &[f64] {
        let q = self.controls.dim();
        let at = self.offset(k) + (i * self.m_axes[k].count + j) * q;
        &self.values[at..at + q]
    }

    pub fn set_cell(&mut self, k: usize, i: usize, j: usize, u: &[f64]) {
        let q = self.controls.dim();
        let at = self.offset(k) + (i * self.m_axes[k].count + j) * q;
        self.values[at..at + q].copy_from_slice(u);
    }

    /// Number of table cells (time × x × m).
    pub fn cells(&self) -> usize {
        self.m_axes
            .iter()
            .map(|a| self.x_axis.count * a.count)
            .sum()
    }

    fn node_value(&self, k: usize, x: f64, m: f64, d: usize) -> f64 {
        let q = self.controls.dim();
        let off = self.offset(k);
        let mc = self.m_axes[k].count;
        linear_2d(&self.x_axis, &self.m_axes[k], x, m, |i, j| {
            self.values[off + (i * mc + j) * q + d]
        })
    }

    /// Interpolated (unprojected) control value.
    pub fn raw_control(&self, t: f64, x: f64, m: f64) -> Vec<f64> {
        let q = self.controls.dim();
        let last = self.times.len() - 1;
        let pos = self.times.partition_point(|s| *s <= t);
        // pos - 1 is the last node <= t
        let (k, w) = if pos == 0 {
            (0, 0.0)
        } else if pos > last || self.times[pos - 1] == t {
            (pos - 1, 0.0)
        } else {
            let k = pos - 1;
            (k, (t - self.times[k]) / (self.times[k + 1] - self.times[k]))
        };
        (0..q)
            .map(|d| {
                let a = self.node_value(k, x, m, d);
                if w == 0.0 {
                    a
                } else {
                    (1.0 - w) * a + w * self.node_value(k + 1, x, m, d)
                }
            })
            .collect()
    }
}

impl MarkovPolicy for FeedbackTable {
    fn control_index(&self, _step: usize, t: f64, x: &[f64], features: &MeasureFeatures) -> usize {
        let m = features.mean.first().copied().unwrap_or(0.0);
        self.controls.nearest(&self.raw_control(t, x[0], m))
    }
}

/// One table per common-noise scenario, selected by `MeasureFeatures::scenario`.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioTables {
    pub tables: Vec<FeedbackTable>,
}

impl MarkovPolicy for ScenarioTables {
    fn control_index(&self, step: usize, t: f64, x: &[f64], features: &MeasureFeatures) -> usize {
        let s = features
            .scenario
            .expect("scenario-indexed policy used without a scenario index");
        self.tables[s].control_index(step, t, x, features)
    }

    fn reads_scenario(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> FeedbackTable {
        let u = ControlGrid::uniform_1d(-1.0, 1.0, 21).unwrap();
        let xa = Axis::new(-2.0, 2.0, 5).unwrap();
        let ma = vec![Axis::new(-1.0, 1.0, 3).unwrap(), Axis::single(0.0)];
        let mut t = FeedbackTable::constant(vec![0.0, 1.0], xa, ma, u, 10).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let (x, m) = (xa.node(i), t.m_axes[0].node(j));
                t.set_cell(0, i, j, &[(-(x - m) / 2.0).clamp(-1.0, 1.0)]);
            }
            t.set_cell(1, i, 0, &[0.5]);
        }
        t
    }

    #[test]
    fn node_lookup_is_exact() {
        let t = table();
        let f = MeasureFeatures {
            mean: vec![1.0],
            ..Default::default()
        };
        // x = 1, m = 1 -> u = 0 -> index 10
        assert_eq!(t.control_index(0, 0.0, &[1.0], &f), 10);
        assert_eq!(t.control_index(1, 1.0, &[1.0], &f), 15);
    }

    #[test]
    fn time_interpolation_midpoint() {
        let t = table();
        let f = MeasureFeatures {
            mean: vec![0.0],
            ..Default::default()
        };
        // at t=0.5, x=0, m=0 the two nodes give 0 and 0.5
        let u = t.raw_control(0.5, 0.0, 0.0);
        assert!((u[0] - 0.25).abs() < 1e-15);
        let i = t.control_index(0, 0.5, &[0.0], &f);
        assert!(i == 12 || i == 13);
    }

    #[test]
    fn features_ignore_point_order() {
        let a = MeasureFeatures::of_points(&[0.1, 0.7, -0.3, 1e-8], 1);
        let b = MeasureFeatures::of_points(&[1e-8, -0.3, 0.1, 0.7], 1);
        assert_eq!(a, b);
    }
}
