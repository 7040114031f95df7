//! Derivative-free coordinate pattern search.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub initial_step: f64,
    pub min_step: f64,
    /// Extra passes that restart from the best point with the initial step.
    pub restarts: usize,
    pub max_evaluations: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            initial_step: 1.0,
            min_step: 0.05,
            restarts: 1,
            max_evaluations: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub params: Vec<f64>,
    pub value: f64,
    /// Best value after each sweep.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Coordinate pattern search, see [`pattern_search_directions`].
pub fn pattern_search(
    start: Vec<f64>,
    bounds: (f64, f64),
    s: &SearchSettings,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<SearchOutcome> {
    pattern_search_directions(start, bounds, &[], s, f)
}

/// Maximizes `f` over the box `bounds^d`. Each sweep tries ±step along every
/// direction in `extra` and then along every coordinate, keeping strict
/// improvements; the step halves after a sweep without one and the pass
/// ends below `min_step`.
pub fn pattern_search_directions(
    start: Vec<f64>,
    bounds: (f64, f64),
    extra: &[Vec<f64>],
    s: &SearchSettings,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<SearchOutcome> {
    if !(s.initial_step > 0.0 && s.min_step > 0.0) || s.max_evaluations == 0 {
        return Err(domain("search steps and budget must be positive"));
    }
    let (lo, hi) = bounds;
    let mut x = start;
    let mut best = f(&x)?;
    let mut evals = 1;
    let mut trace = vec![best];
    let mut exhausted = false;
    'passes: for _ in 0..=s.restarts {
        let mut step = s.initial_step;
        while step >= s.min_step {
            let mut improved = false;
            let dim = x.len();
            let coords = (0..dim).map(|c| {
                let mut e = vec![0.0; dim];
                e[c] = 1.0;
                e
            });
            for d in extra.iter().cloned().chain(coords) {
                for sign in [1.0, -1.0] {
                    let trial: Vec<f64> = x
                        .iter()
                        .zip(&d)
                        .map(|(v, e)| (v + sign * step * e).clamp(lo, hi))
                        .collect();
                    if trial == x {
                        continue;
                    }
                    if evals >= s.max_evaluations {
                        exhausted = true;
                        break 'passes;
                    }
                    let val = f(&trial)?;
                    evals += 1;
                    if val > best {
                        best = val;
                        x = trial;
                        improved = true;
                        break;
                    }
                }
            }
            trace.push(best);
            if !improved {
                step *= 0.5;
            }
        }
    }
    Ok(SearchOutcome {
        params: x,
        value: best,
        trace,
        evaluations: evals,
        budget_exhausted: exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_maximum() {
        let out = pattern_search(
            vec![0.0, 0.0],
            (-4.0, 4.0),
            &SearchSettings::default(),
            |p| Ok(-(p[0] - 1.0).powi(2) - (p[1] + 0.5).powi(2)),
        )
        .unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-12 && (out.params[1] + 0.5).abs() < 1e-12);
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
