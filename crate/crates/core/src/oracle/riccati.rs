//! Riccati ODEs for the linear-quadratic model, integrated with classical
//! RK4 on a grid ten times finer than the simulation grid. Everything here
//! reads the raw parameters only.

use crate::model::catalog::LqParams;

/// Coefficients on the fine grid `t_i = i h`.
#[derive(Debug, Clone)]
pub struct MfgRiccati {
    pub h: f64,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
}

impl MfgRiccati {
    /// Mean-reversion rate of the equilibrium mean at fine node `i`:
    /// κ − (P + S)/r.
    pub fn a(&self, prm: &LqParams, i: usize) -> f64 {
        prm.kappa - (self.p[i] + self.s[i]) / prm.r
    }
}

fn rk4_backward<const D: usize>(
    y_t: [f64; D],
    horizon: f64,
    n: usize,
    f: impl Fn([f64; D]) -> [f64; D],
) -> Vec<[f64; D]> {
    let h = horizon / n as f64;
    let mut out = vec![y_t; n + 1];
    let mut y = y_t;
    let add = |a: [f64; D], b: [f64; D], c: f64| -> [f64; D] {
        let mut r = a;
        for i in 0..D {
            r[i] += c * b[i];
        }
        r
    };
    for i in (0..n).rev() {
        // step from t_{i+1} to t_i, i.e. with step −h
        let k1 = f(y);
        let k2 = f(add(y, k1, -0.5 * h));
        let k3 = f(add(y, k2, -0.5 * h));
        let k4 = f(add(y, k3, -h));
        for d in 0..D {
            y[d] -= h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        out[i] = y;
    }
    out
}

/// Equilibrium system for the mean field game with value
/// V = −(P x² + 2 S x m + R m²) − h:
/// P' = P²/r − q, P(T) = q_T;
/// S' = P S / r − κ P − A S + q c, S(T) = −q_T c_T, A = κ − (P + S)/r.
pub fn mfg_riccati(prm: &LqParams, sim_steps: usize) -> MfgRiccati {
    let n = sim_steps * 10;
    let (kappa, r, q, c) = (prm.kappa, prm.r, prm.q, prm.c);
    let sol = rk4_backward(
        [prm.q_terminal, -prm.q_terminal * prm.c_terminal],
        prm.horizon,
        n,
        |[p, s]| {
            let a = kappa - (p + s) / r;
            [p * p / r - q, p * s / r - kappa * p - a * s + q * c]
        },
    );
    MfgRiccati {
        h: prm.horizon / n as f64,
        p: sol.iter().map(|v| v[0]).collect(),
        s: sol.iter().map(|v| v[1]).collect(),
    }
}

/// Equilibrium conditional mean on the simulation grid for a common-noise
/// path given by its node values `b` (length sim_steps + 1), taken
/// piecewise linear between nodes: dm = A(t) m dt + σ0 dB.
pub fn mfg_mean_path(prm: &LqParams, b: &[f64], m0: f64) -> Vec<f64> {
    let steps = b.len() - 1;
    let ric = mfg_riccati(prm, steps);
    let dt = prm.horizon / steps as f64;
    let h = ric.h;
    let a_at = |t: f64| {
        // linear interpolation of A on the fine grid
        let s = (t / h).clamp(0.0, (ric.p.len() - 1) as f64);
        let i = (s.floor() as usize).min(ric.p.len() - 2);
        let w = s - i as f64;
        (1.0 - w) * ric.a(prm, i) + w * ric.a(prm, i + 1)
    };
    let mut out = vec![m0];
    let mut m = m0;
    for k in 0..steps {
        let drive = prm.sigma0 * (b[k + 1] - b[k]) / dt;
        for j in 0..10 {
            let t = k as f64 * dt + j as f64 * h;
            let f = |t: f64, m: f64| a_at(t) * m + drive;
            let k1 = f(t, m);
            let k2 = f(t + 0.5 * h, m + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, m + 0.5 * h * k2);
            let k4 = f(t + h, m + h * k3);
            m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(m);
    }
    out
}

/// Optimal mean field control value.
///
/// Splitting x = m + y with m the conditional mean, the problem separates:
/// y solves dy = v dt + σ dW with reward −r v² − q y², terminal −q_T y²,
/// and m solves dm = (κ m + w) dt + σ0 dB with reward −r w² − q (1−c)² m²,
/// terminal −q_T (1−c_T)² m². Each is a scalar LQ problem with Riccati
/// P' = P²/r − q and Π' = Π²/r − 2κΠ − q(1−c)².
pub fn mfc_value(prm: &LqParams, sim_steps: usize) -> f64 {
    let n = sim_steps * 10;
    let h = prm.horizon / n as f64;
    let (kappa, r, q) = (prm.kappa, prm.r, prm.q);
    let qm = q * (1.0 - prm.c).powi(2);
    let p = rk4_backward([prm.q_terminal], prm.horizon, n, |[p]| [p * p / r - q]);
    let pi = rk4_backward(
        [prm.q_terminal * (1.0 - prm.c_terminal).powi(2)],
        prm.horizon,
        n,
        |[v]| [v * v / r - 2.0 * kappa * v - qm],
    );
    let trap =
        |v: &[[f64; 1]]| h * (v.iter().map(|x| x[0]).sum::<f64>() - 0.5 * (v[0][0] + v[n][0]));
    let var_xi = prm.xi_sd * prm.xi_sd;
    let cost_y = p[0][0] * var_xi + prm.sigma * prm.sigma * trap(&p);
    let cost_m = pi[0][0] * prm.xi_mean * prm.xi_mean + prm.sigma0 * prm.sigma0 * trap(&pi);
    -(cost_y + cost_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameters_are_stationary() {
        let prm = LqParams::default();
        let ric = mfg_riccati(&prm, 100);
        for i in 0..ric.p.len() {
            assert!((ric.p[i] - 1.0).abs() < 1e-12);
            assert!((ric.s[i] + 1.0).abs() < 1e-12);
            assert!((ric.a(&prm, i) - 0.5).abs() < 1e-12);
        }
        assert!((mfc_value(&prm, 100) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn riccati_matches_closed_form() {
        // P' = P² − 1 with P(T) = 0 has P(t) = tanh(T − t)
        let prm = LqParams {
            q_terminal: 0.0,
            ..LqParams::default()
        };
        let ric = mfg_riccati(&prm, 50);
        for (i, p) in ric.p.iter().enumerate() {
            let t = i as f64 * ric.h;
            assert!((p - (1.0 - t).tanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_path_without_noise_is_exponential() {
        let prm = LqParams::default();
        let m = mfg_mean_path(&prm, &[0.0; 11], 2.0);
        assert!((m[10] - 2.0 * 0.5f64.exp()).abs() < 1e-10);
    }
}
