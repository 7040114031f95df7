//! Uniform axes and interpolation on them.
//!
//! Value functions use Keys' cubic kernel (a = −1/2), which reproduces
//! quadratics exactly; ghost nodes beyond the ends are filled by quadratic
//! extrapolation so that exactness survives at the boundary cells. Queries
//! outside an axis are clamped (flat extrapolation) and reported.

use serde::Serialize;

use crate::error::{domain, Result};

/// `count` equally spaced nodes on `[lo, hi]`; a single node when `count == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Position of a query on an axis.
#[derive(Debug, Clone, Copy)]
pub struct Locate {
    pub cell: usize,
    pub frac: f64,
    pub clamped: bool,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo || (count > 1 && hi == lo) {
            return Err(domain(format!("bad axis [{lo}, {hi}] with {count} nodes")));
        }
        Ok(Axis { lo, hi, count })
    }

    pub fn single(at: f64) -> Self {
        Axis {
            lo: at,
            hi: at,
            count: 1,
        }
    }

    pub fn step(&self) -> f64 {
        if self.count > 1 {
            (self.hi - self.lo) / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        if self.count == 1 {
            self.lo
        } else if i + 1 == self.count {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    #[inline]
    pub fn locate(&self, v: f64) -> Locate {
        if self.count == 1 {
            let clamped = (v - self.lo).abs() > 1e-9 * (1.0 + self.lo.abs());
            return Locate {
                cell: 0,
                frac: 0.0,
                clamped,
            };
        }
        let span = self.hi - self.lo;
        let tol = 1e-9 * span;
        let clamped = v < self.lo - tol || v > self.hi + tol;
        let vc = v.clamp(self.lo, self.hi);
        let s = (vc - self.lo) / span * (self.count - 1) as f64;
        let cell = (s.floor() as usize).min(self.count - 2);
        let mut frac = s - cell as f64;
        // snap exact node hits so that grid queries are bit-exact
        if vc == self.node(cell) {
            frac = 0.0;
        } else if vc == self.node(cell + 1) {
            frac = 1.0;
        }
        Locate {
            cell,
            frac: frac.clamp(0.0, 1.0),
            clamped,
        }
    }
}

#[inline]
fn keys_weights(f: f64) -> [f64; 4] {
    if f == 0.0 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    if f == 1.0 {
        return [0.0, 0.0, 1.0, 0.0];
    }
    let f2 = f * f;
    let f3 = f2 * f;
    [
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    ]
}

/// Value at node `i ∈ [-1, count]` with quadratic ghost extrapolation.
#[inline]
fn node_value(get: &impl Fn(usize) -> f64, count: usize, i: isize) -> f64 {
    if i >= 0 && (i as usize) < count {
        return get(i as usize);
    }
    let (a, b, c) = if i < 0 {
        (0, 1, 2)
    } else {
        (count - 1, count - 2, count - 3)
    };
    match count {
        1 => get(0),
        2 => 2.0 * get(a) - get(b),
        _ => 3.0 * get(a) - 3.0 * get(b) + get(c),
    }
}

/// Cubic interpolation of `get(i)` along `axis`.
#[inline]
pub fn cubic_1d(axis: &Axis, v: f64, get: impl Fn(usize) -> f64) -> (f64, bool) {
    let loc = axis.locate(v);
    if axis.count == 1 {
        return (get(0), loc.clamped);
    }
    let w = keys_weights(loc.frac);
    let mut s = 0.0;
    for (o, wo) in w.iter().enumerate() {
        if *wo != 0.0 {
            s += wo * node_value(&get, axis.count, loc.cell as isize + o as isize - 1);
        }
    }
    (s, loc.clamped)
}

/// Tensor cubic interpolation of `get(i, j)` on `ax × am`. Outside the
/// x axis the query is clamped; outside the m axis the columns are
/// extrapolated with the quadratic through the three outermost nodes. The
/// flag reports either event.
#[inline]
pub fn cubic_2d(
    ax: &Axis,
    am: &Axis,
    x: f64,
    m: f64,
    get: impl Fn(usize, usize) -> f64,
) -> (f64, bool) {
    let lm = am.locate(m);
    let clamped = lm.clamped || ax.locate(x).clamped;
    if am.count == 1 {
        return (cubic_1d(ax, x, |i| get(i, 0)).0, clamped);
    }
    let column = |j: usize| cubic_1d(ax, x, |i| get(i, j)).0;
    if lm.clamped {
        return (extrapolate(am, m, column), clamped);
    }
    let wm = keys_weights(lm.frac);
    let mut s = 0.0;
    for (o, w) in wm.iter().enumerate() {
        if *w != 0.0 {
            s += w * node_value(&column, am.count, lm.cell as isize + o as isize - 1);
        }
    }
    (s, clamped)
}

/// Lagrange extrapolation through the (up to) three nodes nearest to `v`.
fn extrapolate(axis: &Axis, v: f64, get: impl Fn(usize) -> f64) -> f64 {
    let n = axis.count;
    let idx: Vec<usize> = if v < axis.lo {
        (0..n.min(3)).collect()
    } else {
        (n.saturating_sub(3)..n).collect()
    };
    let mut s = 0.0;
    for &i in &idx {
        let xi = axis.node(i);
        let mut l = 1.0;
        for &j in &idx {
            if j != i {
                let xj = axis.node(j);
                l *= (v - xj) / (xi - xj);
            }
        }
        s += l * get(i);
    }
    s
}

/// Piecewise-linear interpolation of `get(i)` along `axis`.
#[inline]
pub fn linear_1d(axis: &Axis, v: f64, get: impl Fn(usize) -> f64) -> f64 {
    if axis.count == 1 {
        return get(0);
    }
    let loc = axis.locate(v);
    if loc.frac == 0.0 {
        get(loc.cell)
    } else if loc.frac == 1.0 {
        get(loc.cell + 1)
    } else {
        (1.0 - loc.frac) * get(loc.cell) + loc.frac * get(loc.cell + 1)
    }
}

/// Bilinear interpolation of `get(i, j)` on `ax × am`.
#[inline]
pub fn linear_2d(ax: &Axis, am: &Axis, x: f64, m: f64, get: impl Fn(usize, usize) -> f64) -> f64 {
    if am.count == 1 {
        return linear_1d(ax, x, |i| get(i, 0));
    }
    let lm = am.locate(m);
    let a = linear_1d(ax, x, |i| get(i, lm.cell));
    if lm.frac == 0.0 {
        return a;
    }
    let b = linear_1d(ax, x, |i| get(i, lm.cell + 1));
    if lm.frac == 1.0 {
        return b;
    }
    (1.0 - lm.frac) * a + lm.frac * b
}
