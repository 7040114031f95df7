use super::{min_cost_assignment, Ensemble, MeasureFlow, ScenarioEnsemble};
use crate::error::{domain, Result};
use crate::rng::{normal, stream, Domain};

/// Largest scenario count accepted by [`ensemble_law_distance`].
pub const MAX_ASSIGNMENT: usize = 64;

#[inline]
fn pow_abs(d: f64, p: f64) -> f64 {
    let d = d.abs();
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(domain(format!("Wasserstein order must be >= 1, got {p}")));
    }
    Ok(())
}

#[inline]
fn radix_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Ascending sort of finite floats (LSD radix on the IEEE bit patterns).
pub(crate) fn sort_floats(v: &mut [f64]) {
    if v.len() < 256 {
        v.sort_unstable_by(f64::total_cmp);
        return;
    }
    const BITS: u32 = 11;
    const BUCKETS: usize = 1 << BITS;
    let mut keys: Vec<u64> = v.iter().map(|x| radix_key(*x)).collect();
    let mut tmp = vec![0u64; keys.len()];
    let mut shift = 0;
    while shift < 64 {
        let mut count = [0usize; BUCKETS];
        for k in &keys {
            count[((k >> shift) as usize) & (BUCKETS - 1)] += 1;
        }
        if count.iter().any(|&c| c == keys.len()) {
            shift += BITS;
            continue;
        }
        let mut pos = 0;
        for c in count.iter_mut() {
            let here = *c;
            *c = pos;
            pos += here;
        }
        for k in &keys {
            let d = ((k >> shift) as usize) & (BUCKETS - 1);
            tmp[count[d]] = *k;
            count[d] += 1;
        }
        std::mem::swap(&mut keys, &mut tmp);
        shift += BITS;
    }
    for (o, k) in v.iter_mut().zip(keys) {
        let b = if k >> 63 == 1 { k & !(1 << 63) } else { !k };
        *o = f64::from_bits(b);
    }
}

fn sorted_pairs(values: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .collect();
    v.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// W_p^p between two sorted weighted point sets (north-west corner coupling).
fn sorted_cost(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    let (ta, tb): (f64, f64) = (a.iter().map(|x| x.1).sum(), b.iter().map(|x| x.1).sum());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1 / ta, b[0].1 / tb);
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        cost += m * pow_abs(a[i].0 - b[j].0, p);
        ra -= m;
        rb -= m;
        // advance whichever side is exhausted; ties advance both
        let adv_a = ra <= rb;
        let adv_b = rb <= ra;
        if adv_a {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1 / ta;
        }
        if adv_b {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1 / tb;
        }
    }
    cost
}

/// W_p between equal-size uniform point sets given sorted values.
fn sorted_uniform(sa: &[f64], sb: &[f64], p: f64) -> f64 {
    let s: f64 = sa.iter().zip(sb).map(|(x, y)| pow_abs(x - y, p)).sum();
    (s / sa.len() as f64).powf(1.0 / p)
}

/// Exact W_p between weighted point sets on the line.
pub fn wasserstein_1d_points(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    if a.is_empty() || b.is_empty() {
        return Err(domain("Wasserstein distance of an empty ensemble"));
    }
    if a.len() != wa.len() || b.len() != wb.len() {
        return Err(domain("values and weights differ in length"));
    }
    Ok(w1d_unchecked(a, wa, b, wb, p))
}

fn w1d_unchecked(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], p: f64) -> f64 {
    let uniform = |w: &[f64]| w.iter().all(|x| *x == w[0]);
    if a.len() == b.len() && uniform(wa) && uniform(wb) {
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sort_floats(&mut sa);
        sort_floats(&mut sb);
        return sorted_uniform(&sa, &sb, p);
    }
    let sa = sorted_pairs(a, wa);
    let sb = sorted_pairs(b, wb);
    sorted_cost(&sa, &sb, p).max(0.0).powf(1.0 / p)
}

/// Exact W_p between two ensembles living on ℝ (n + q = 1).
pub fn wasserstein_1d(a: &Ensemble, b: &Ensemble, p: f64) -> Result<f64> {
    if a.ambient_dim() != 1 || b.ambient_dim() != 1 {
        return Err(domain(
            "wasserstein_1d needs ensembles on the real line; take a state marginal first",
        ));
    }
    let (xa, xb) = (a.state_coordinate(0), b.state_coordinate(0));
    wasserstein_1d_points(&xa, a.weights(), &xb, b.weights(), p)
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(domain(format!(
            "ambient dimensions differ ({} vs {})",
            a.ambient_dim(),
            b.ambient_dim()
        )));
    }
    Ok(())
}

/// Average over the given unit directions of W_p between projections.
pub fn sliced_wasserstein_with_directions(
    a: &Ensemble,
    b: &Ensemble,
    p: f64,
    directions: &[Vec<f64>],
) -> Result<f64> {
    check_order(p)?;
    check_pair(a, b)?;
    if directions.is_empty() {
        return Err(domain("sliced Wasserstein needs at least one direction"));
    }
    let dim = a.ambient_dim();
    let mut total = 0.0;
    for dir in directions {
        if dir.len() != dim {
            return Err(domain("direction has the wrong dimension"));
        }
        total += w1d_unchecked(
            &a.project(dir),
            a.weights(),
            &b.project(dir),
            b.weights(),
            p,
        );
    }
    Ok(total / directions.len() as f64)
}

/// Uniformly random unit directions in ℝ^dim, reproducible from `seed`.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, Domain::Directions, &[dim as u64]);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Sliced W_p with `directions` random directions drawn from `seed`.
pub fn sliced_wasserstein(
    a: &Ensemble,
    b: &Ensemble,
    p: f64,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    if directions == 0 {
        return Err(domain("sliced Wasserstein needs at least one direction"));
    }
    check_pair(a, b)?;
    let dirs = random_directions(a.ambient_dim(), directions, seed);
    sliced_wasserstein_with_directions(a, b, p, &dirs)
}

/// Fixed direction set used by [`ensemble_distance`] in dimension > 1.
fn canonical_directions(dim: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        vec![vec![1.0, 0.0], vec![h, h], vec![0.0, 1.0], vec![h, -h]]
    } else {
        random_directions(dim, 32, 0)
    }
}

/// Exact W_p on the line, sliced W_p with a fixed direction set otherwise.
pub fn ensemble_distance(a: &Ensemble, b: &Ensemble, p: f64) -> Result<f64> {
    check_pair(a, b)?;
    if a.ambient_dim() == 1 {
        check_order(p)?;
        let (xa, xb) = (a.state_coordinate(0), b.state_coordinate(0));
        return wasserstein_1d_points(&xa, a.weights(), &xb, b.weights(), p);
    }
    sliced_wasserstein_with_directions(a, b, p, &canonical_directions(a.ambient_dim()))
}

/// sup_k W_p(μ^a_k, μ^b_k) + Δt Σ_k W_p(ν̄^a_k, ν̄^b_k).
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow, p: f64) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(domain("flows live on different time grids"));
    }
    check_order(p)?;
    let dt = a.grid().dt();
    let mut sup: f64 = 0.0;
    let mut integral = 0.0;
    for (fa, fb) in a.frames().iter().zip(b.frames()) {
        check_pair(fa, fb)?;
        if let Some((ws, wj)) = uniform_line_frames(fa, fb, p) {
            sup = sup.max(ws);
            integral += wj;
            continue;
        }
        let ws = ensemble_distance(&fa.state_marginal(), &fb.state_marginal(), p)?;
        sup = sup.max(ws);
        integral += if fa.q() == 0 && fb.q() == 0 {
            ws
        } else {
            ensemble_distance(fa, fb, p)?
        };
    }
    Ok(sup + dt * integral)
}

fn is_uniform(e: &Ensemble) -> bool {
    let w = e.weights();
    w.iter().all(|x| *x == w[0])
}

/// Fast path for equal-size uniform frames with n = 1 and q ≤ 1: returns
/// (state distance, joint distance) computed exactly as
/// [`ensemble_distance`] would, sharing the sorted state coordinates.
fn uniform_line_frames(fa: &Ensemble, fb: &Ensemble, p: f64) -> Option<(f64, f64)> {
    if fa.n() != 1 || fa.q() > 1 || fa.len() != fb.len() || !is_uniform(fa) || !is_uniform(fb) {
        return None;
    }
    let (xa, ua, _) = fa.to_arrays();
    let (xb, ub, _) = fb.to_arrays();
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        sort_floats(&mut s);
        s
    };
    let ws = sorted_uniform(&sorted(&xa), &sorted(&xb), p);
    if fa.q() == 0 {
        return Some((ws, ws));
    }
    let mut total = ws;
    for dir in &canonical_directions(2)[1..] {
        let proj = |x: &[f64], u: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = x
                .iter()
                .zip(u)
                .map(|(a, b)| dir[0] * a + dir[1] * b)
                .collect();
            sort_floats(&mut v);
            v
        };
        total += sorted_uniform(&proj(&xa, &ua), &proj(&xb, &ub), p);
    }
    Some((ws, total / 4.0))
}

/// Empirical W_p between equally weighted scenario sets given their pairwise
/// ground distances `d[i][j]`.
pub fn law_distance_from_costs(d: &[Vec<f64>], p: f64) -> Result<f64> {
    check_order(p)?;
    let s = d.len();
    if s == 0 || d.iter().any(|r| r.len() != s) {
        return Err(domain("cost matrix must be square and nonempty"));
    }
    let cost: Vec<Vec<f64>> = d
        .iter()
        .map(|r| r.iter().map(|x| pow_abs(*x, p)).collect())
        .collect();
    let (_, total) = min_cost_assignment(&cost);
    Ok((total.max(0.0) / s as f64).powf(1.0 / p))
}

/// Sorted slices of one frame: the state coordinate, then (when q = 1) the
/// remaining canonical directions of the joint space.
struct SortedFrame {
    slices: Vec<Vec<(f64, f64)>>,
    uniform: bool,
}

fn prepare_flow(flow: &MeasureFlow) -> Option<Vec<SortedFrame>> {
    if flow.n() != 1 || flow.q() > 1 {
        return None;
    }
    let dirs = canonical_directions(2);
    Some(
        flow.frames()
            .iter()
            .map(|f| {
                let w = f.weights();
                let mut slices = vec![sorted_pairs(&f.state_coordinate(0), w)];
                if f.q() == 1 {
                    for dir in &dirs[1..] {
                        slices.push(sorted_pairs(&f.project(dir), w));
                    }
                }
                SortedFrame {
                    slices,
                    uniform: is_uniform(f),
                }
            })
            .collect(),
    )
}

fn slice_distance(a: &[(f64, f64)], b: &[(f64, f64)], uniform: bool, p: f64) -> f64 {
    if uniform && a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| pow_abs(x.0 - y.0, p)).sum();
        return (s / a.len() as f64).powf(1.0 / p);
    }
    sorted_cost(a, b, p).max(0.0).powf(1.0 / p)
}

/// [`flow_distance`] between prepared flows; same value, no re-sorting.
fn prepared_distance(a: &[SortedFrame], b: &[SortedFrame], dt: f64, p: f64) -> f64 {
    let mut sup: f64 = 0.0;
    let mut integral = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        let uniform = fa.uniform && fb.uniform;
        let ws = slice_distance(&fa.slices[0], &fb.slices[0], uniform, p);
        sup = sup.max(ws);
        integral += if fa.slices.len() == 1 {
            ws
        } else {
            let mut total = ws;
            for (sa, sb) in fa.slices[1..].iter().zip(&fb.slices[1..]) {
                total += slice_distance(sa, sb, uniform, p);
            }
            total / 4.0
        };
    }
    sup + dt * integral
}

/// Empirical W_p between two scenario ensembles under [`flow_distance`].
pub fn ensemble_law_distance(a: &ScenarioEnsemble, b: &ScenarioEnsemble, p: f64) -> Result<f64> {
    use rayon::prelude::*;
    if a.len() != b.len() {
        return Err(domain(format!(
            "scenario counts differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() > MAX_ASSIGNMENT {
        return Err(domain(format!(
            "at most {MAX_ASSIGNMENT} scenarios supported, got {}",
            a.len()
        )));
    }
    check_order(p)?;
    let same_shape = a
        .scenarios()
        .iter()
        .chain(b.scenarios())
        .all(|s| s.flow.grid() == a.grid() && s.flow.q() == a.scenarios()[0].flow.q());
    let prep = |e: &ScenarioEnsemble| -> Option<Vec<Vec<SortedFrame>>> {
        e.scenarios()
            .par_iter()
            .map(|s| prepare_flow(&s.flow))
            .collect()
    };
    let d: Vec<Vec<f64>> = match (same_shape, prep(a), prep(b)) {
        (true, Some(pa), Some(pb)) => {
            let dt = a.grid().dt();
            pa.par_iter()
                .map(|fa| {
                    pb.iter()
                        .map(|fb| prepared_distance(fa, fb, dt, p))
                        .collect()
                })
                .collect()
        }
        _ => a
            .scenarios()
            .iter()
            .map(|sa| {
                b.scenarios()
                    .iter()
                    .map(|sb| flow_distance(&sa.flow, &sb.flow, p))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
    };
    law_distance_from_costs(&d, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Ensemble {
        Ensemble::uniform(0.0, 1, 0, xs.to_vec(), vec![]).unwrap()
    }

    #[test]
    fn diracs() {
        assert_eq!(
            wasserstein_1d(&pts(&[0.0]), &pts(&[1.0]), 1.0).unwrap(),
            1.0
        );
        let a = pts(&[0.3, -1.0, 2.0]);
        assert_eq!(wasserstein_1d(&a, &a, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn two_atom_example() {
        let w = wasserstein_1d(&pts(&[0.0, 2.0]), &pts(&[1.0, 3.0]), 2.0).unwrap();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_against_uniform_split() {
        let a = wasserstein_1d_points(&[0.0, 1.0], &[0.25, 0.75], &[2.0], &[1.0], 1.0).unwrap();
        assert!((a - (0.25 * 2.0 + 0.75 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn empty_is_error() {
        assert!(wasserstein_1d_points(&[], &[], &[1.0], &[1.0], 1.0).is_err());
        assert!(wasserstein_1d_points(&[1.0], &[1.0], &[1.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn sliced_zero_directions_is_error() {
        let a = pts(&[0.0]);
        assert!(sliced_wasserstein(&a, &a, 1.0, 0, 1).is_err());
    }

    #[test]
    fn radix_sort_matches_comparison_sort() {
        let mut state = 7u64;
        let mut v: Vec<f64> = (0..5000)
            .map(|i| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let x = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e3;
                if i % 17 == 0 {
                    0.0
                } else if i % 19 == 0 {
                    -0.0
                } else {
                    x
                }
            })
            .collect();
        let mut w = v.clone();
        sort_floats(&mut v);
        w.sort_unstable_by(f64::total_cmp);
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            w.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fast_flow_path_agrees_with_generic() {
        let a = Ensemble::uniform(
            0.0,
            1,
            1,
            (0..300).map(|i| (i as f64 * 0.37).sin()).collect(),
            (0..300).map(|i| (i % 3) as f64).collect(),
        )
        .unwrap();
        let b = Ensemble::uniform(
            0.0,
            1,
            1,
            (0..300).map(|i| (i as f64 * 0.11).cos()).collect(),
            (0..300).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap();
        let (ws, wj) = uniform_line_frames(&a, &b, 2.0).unwrap();
        let gs = ensemble_distance(&a.state_marginal(), &b.state_marginal(), 2.0).unwrap();
        let gj = ensemble_distance(&a, &b, 2.0).unwrap();
        assert!((ws - gs).abs() < 1e-12 && (wj - gj).abs() < 1e-12);
    }

    #[test]
    fn law_distance_two_by_two() {
        let d = vec![vec![1.0, 3.0], vec![3.0, 1.0]];
        assert!((law_distance_from_costs(&d, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }
}
