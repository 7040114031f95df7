//! Dynamic-programming view of one player facing the others.

use crate::dp::DpEnvironment;
use crate::error::{domain, Result};
use crate::interp::Axis;
use crate::measures::Ensemble;
use crate::mfg::{fit_line, nearest, padded_axis};
use crate::model::{ModelSpec, TimeGrid};
use crate::policy::MeasureFeatures;

use super::GameTrajectory;

/// Player `i` sees the others through their mean m. Its drift is regressed
/// on m across base paths, the idiosyncratic part of its noise has standard
/// deviation σ/√(N−1), and the representative joint measure at a mean node
/// is the nearest base path's frame with the others translated onto the
/// node. The player's own atom sits at index 0 and is replaced during the
/// sweep.
pub struct PlayerEnvironment {
    grid: TimeGrid,
    axes: Vec<Axis>,
    lines: Vec<(f64, f64)>,
    extra_sd: Vec<f64>,
    reps: Vec<Vec<Ensemble>>,
    dt: f64,
}

impl PlayerEnvironment {
    pub fn new(
        spec: &ModelSpec,
        player: usize,
        base: &[GameTrajectory],
        m_count: usize,
    ) -> Result<Self> {
        if spec.n != 1 {
            return Err(domain("player environment needs one-dimensional states"));
        }
        let first = base
            .first()
            .ok_or_else(|| domain("need at least one base path"))?;
        let big_n = first.players;
        if player >= big_n {
            return Err(domain(format!(
                "player {player} out of range for {big_n} players"
            )));
        }
        let grid = first.grid.clone();
        let dt = grid.dt();
        let others = big_n - 1;
        let q = spec.q;
        let mut axes = Vec::new();
        let mut lines = Vec::new();
        let mut extra_sd = Vec::new();
        let mut reps = Vec::new();
        let mut sig = [0.0];
        let mut bs = [0.0];
        let mut bc = [0.0];
        for k in 0..=grid.steps() {
            let t = grid.time(k);
            if others == 0 {
                axes.push(Axis::single(0.0));
                lines.push((0.0, 0.0));
                extra_sd.push(0.0);
                let tr = &base[0];
                let u = spec.controls.point(tr.controls[k][player]);
                reps.push(vec![Ensemble::uniform(
                    t,
                    1,
                    q,
                    tr.state(k, player).to_vec(),
                    u.to_vec(),
                )?]);
                continue;
            }
            let mut ms = Vec::with_capacity(base.len());
            let mut ys = Vec::with_capacity(base.len());
            let mut var = 0.0;
            for tr in base {
                let frame = &tr.frames[k];
                (spec.b_star)(t, frame, &mut bs);
                let (mut m, mut y) = (0.0, 0.0);
                for j in (0..big_n).filter(|&j| j != player) {
                    let x = tr.state(k, j);
                    (spec.b_circ)(t, x, spec.controls.point(tr.controls[k][j]), &mut bc);
                    (spec.sigma)(t, x, &mut sig);
                    m += x[0];
                    y += bs[0] + bc[0];
                    var += sig[0] * sig[0];
                }
                ms.push(m / others as f64);
                ys.push(y / others as f64);
            }
            let sd = (var / (others * base.len()) as f64).sqrt() / (others as f64).sqrt();
            let extra = 3.0 * (spec.sigma0[0].abs() + sd) * dt.sqrt();
            let axis = padded_axis(&ms, extra, m_count)?;
            lines.push(fit_line(&ms, &ys));
            extra_sd.push(sd);
            let row = (0..axis.count)
                .map(|j| {
                    let target = axis.node(j);
                    let p = nearest(&ms, target);
                    let tr = &base[p];
                    let mut xs = Vec::with_capacity(big_n);
                    let mut us = Vec::with_capacity(big_n * q);
                    for a in std::iter::once(player).chain((0..big_n).filter(|&j| j != player)) {
                        xs.push(tr.state(k, a)[0]);
                        us.extend_from_slice(spec.controls.point(tr.controls[k][a]));
                    }
                    let e = Ensemble::uniform(t, 1, q, xs, us)?;
                    if target == ms[p] {
                        Ok(e)
                    } else {
                        e.shifted(&[target - ms[p]])
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            axes.push(axis);
            reps.push(row);
        }
        Ok(PlayerEnvironment {
            grid,
            axes,
            lines,
            extra_sd,
            reps,
            dt,
        })
    }
}

impl DpEnvironment for PlayerEnvironment {
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

    fn m_extra_sd(&self, k: usize) -> f64 {
        self.extra_sd[k]
    }

    fn common_noise_random(&self) -> bool {
        true
    }

    fn measure(&self, k: usize, j: usize) -> &Ensemble {
        &self.reps[k][j]
    }

    fn own_atom(&self) -> Option<usize> {
        Some(0)
    }

    fn features(&self, k: usize, j: usize, x: f64) -> MeasureFeatures {
        let e = &self.reps[k][j];
        let mut pts = e.state_coordinate(0);
        pts[0] = x;
        MeasureFeatures::of_points(&pts, 1)
    }
}
