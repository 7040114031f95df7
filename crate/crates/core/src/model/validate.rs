use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::{check_invertible, ModelSpec};
use crate::error::Error;
use crate::measures::Ensemble;
use crate::rng::{normal, stream, Domain};

/// One validated condition with its worst observed witness.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub observed: f64,
    /// Declared bound, when the condition compares against one.
    pub declared: Option<f64>,
    pub witness: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    /// Set when validation stopped early (singular σ0, bad dimensions).
    pub hard_failure: Option<String>,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.hard_failure.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bound_check(name: &str, observed: f64, declared: Option<f64>, witness: String) -> Option<Check> {
    declared.map(|d| Check {
        name: name.into(),
        passed: observed <= d * (1.0 + 1e-12),
        observed,
        declared: Some(d),
        witness,
    })
}

/// Monte Carlo check of the standing assumptions on a random sample of
/// (t, x, u, ν̄). Deterministic given `seed`.
pub fn validate_model(spec: &ModelSpec, sample_size: usize, seed: u64) -> ValidationReport {
    if let Err(e) = spec.check() {
        let msg = match e {
            Error::SingularNoise { .. } => "noise matrix singular".to_string(),
            other => other.to_string(),
        };
        return ValidationReport {
            hard_failure: Some(msg),
            checks: vec![],
        };
    }
    let sample_size = sample_size.max(1);
    let n = spec.n;
    let nu = spec.controls.len();
    let mut rng = stream(seed, Domain::Validation, &[]);

    // reference measures: small ensembles drawn around the initial law
    let draw_state = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
        let mut x = vec![0.0; n];
        spec.initial.sample(rng, &mut x);
        x.iter_mut().for_each(|v| *v += 2.0 * normal(rng));
        x
    };
    let draw_measure = |rng: &mut crate::rng::StreamRng| -> Ensemble {
        let m = 8;
        let mut xs = Vec::with_capacity(m * n);
        let mut us = Vec::with_capacity(m * spec.q);
        for _ in 0..m {
            xs.extend(draw_state(rng));
            let j = rng.random_range(0..nu);
            us.extend_from_slice(spec.controls.point(j));
        }
        Ensemble::uniform(0.0, n, spec.q, xs, us).expect("validation ensemble")
    };

    let mut theta = f64::INFINITY;
    let mut theta_at = String::new();
    let mut drift_sup: f64 = 0.0;
    let mut drift_at = String::new();
    let mut sigma_sup: f64 = 0.0;
    let mut reward_sup: f64 = 0.0;
    let mut reward_at = String::new();
    let mut lip_b: f64 = 0.0;
    let mut lip_s: f64 = 0.0;
    let mut sep_err: f64 = 0.0;
    let mut sig = vec![0.0; n * n];
    let mut sig2 = vec![0.0; n * n];
    let mut bs = vec![0.0; n];
    let mut bc = vec![0.0; n];
    let mut bc2 = vec![0.0; n];
    let mut moment = 0.0;
    let p_prime = spec.p.max(n as f64) + 1.0;

    for _ in 0..sample_size {
        let t = rng.random::<f64>() * spec.horizon;
        let x = draw_state(&mut rng);
        let y = draw_state(&mut rng);
        let u = spec.controls.point(rng.random_range(0..nu)).to_vec();
        let v = spec.controls.point(rng.random_range(0..nu)).to_vec();
        let mu = draw_measure(&mut rng);
        let mu2 = draw_measure(&mut rng);

        (spec.sigma)(t, &x, &mut sig);
        let a = DMatrix::from_row_slice(n, n, &sig);
        let eig = (&a * a.transpose()).symmetric_eigen().eigenvalues.min();
        if eig < theta {
            theta = eig;
            theta_at = format!("t={t:.4}, x={x:?}");
        }
        sigma_sup = sigma_sup.max(a.norm());
        (spec.sigma)(t, &y, &mut sig2);
        let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dxy > 1e-9 {
            let ds = sig
                .iter()
                .zip(&sig2)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            lip_s = lip_s.max(ds / dxy);
        }

        (spec.b_star)(t, &mu, &mut bs);
        (spec.b_circ)(t, &x, &u, &mut bc);
        let total: Vec<f64> = bs.iter().zip(&bc).map(|(a, b)| a + b).collect();
        if norm(&total) > drift_sup {
            drift_sup = norm(&total);
            drift_at = format!("t={t:.4}, x={x:?}, u={u:?}");
        }
        (spec.b_circ)(t, &y, &u, &mut bc2);
        if dxy > 1e-9 {
            let db = norm(&bc.iter().zip(&bc2).map(|(a, b)| a - b).collect::<Vec<_>>());
            lip_b = lip_b.max(db / dxy);
        }

        // separability: b(·,ν̄) − b(·,ν̄') must not depend on (x, u)
        let d1 = super::eval_drift(spec, t, &x, &mu, &u);
        let d2 = super::eval_drift(spec, t, &x, &mu2, &u);
        let d3 = super::eval_drift(spec, t, &y, &mu, &v);
        let d4 = super::eval_drift(spec, t, &y, &mu2, &v);
        for i in 0..n {
            sep_err = sep_err.max(((d1[i] - d2[i]) - (d3[i] - d4[i])).abs());
        }

        let r = super::eval_running_cost(spec, t, &x, &mu, &u)
            .abs()
            .max(super::eval_terminal(spec, &x, &mu).abs());
        if r > reward_sup {
            reward_sup = r;
            reward_at = format!("t={t:.4}, x={x:?}, u={u:?}");
        }

        let mut xi = vec![0.0; n];
        spec.initial.sample(&mut rng, &mut xi);
        moment += norm(&xi).powf(p_prime);
    }

    let mut checks = vec![Check {
        name: "noise matrix invertible".into(),
        passed: check_invertible(&spec.sigma0, n).is_ok(),
        observed: DMatrix::from_row_slice(n, n, &spec.sigma0)
            .determinant()
            .abs(),
        declared: None,
        witness: "sigma0".into(),
    }];
    checks.push(Check {
        name: "non-degeneracy".into(),
        passed: theta > 0.0,
        observed: theta,
        declared: None,
        witness: theta_at,
    });
    checks.push(Check {
        name: "separability".into(),
        passed: sep_err <= 1e-12,
        observed: sep_err,
        declared: None,
        witness: "b(t,x,ν̄,u) − b(t,x,ν̄',u) across (x,u)".into(),
    });
    let moment = moment / sample_size as f64;
    checks.push(Check {
        name: "initial moment".into(),
        passed: moment.is_finite(),
        observed: moment,
        declared: None,
        witness: format!("sample mean of |ξ|^{p_prime}"),
    });
    checks.extend(bound_check(
        "drift bound",
        drift_sup,
        spec.bounds.drift_sup,
        drift_at,
    ));
    checks.extend(bound_check(
        "sigma bound",
        sigma_sup,
        spec.bounds.sigma_sup,
        String::new(),
    ));
    checks.extend(bound_check(
        "reward bound",
        reward_sup,
        spec.bounds.reward_sup,
        reward_at,
    ));
    checks.extend(bound_check(
        "drift lipschitz",
        lip_b,
        spec.bounds.drift_lipschitz,
        String::new(),
    ));
    checks.extend(bound_check(
        "sigma lipschitz",
        lip_s,
        spec.bounds.sigma_lipschitz,
        String::new(),
    ));
    ValidationReport {
        hard_failure: None,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, ControlGrid};

    fn base() -> ModelSpec {
        ModelSpec::new("t", 1, 1.0, ControlGrid::uniform_1d(-1.0, 1.0, 3).unwrap()).unwrap()
    }

    #[test]
    fn identity_sigma_has_unit_floor() {
        let r = validate_model(&base(), 50, 1);
        let c = r.check("non-degeneracy").unwrap();
        assert!(c.passed);
        assert!((c.observed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma0_is_hard_failure() {
        let r = validate_model(&base().with_sigma0(vec![0.0]), 10, 1);
        assert_eq!(r.hard_failure.as_deref(), Some("noise matrix singular"));
        assert!(!r.passed());
    }

    #[test]
    fn control_drift_sup() {
        let spec = base()
            .with_b_circ(|_, _, u, out| out[0] = u[0])
            .with_bounds(Bounds {
                drift_sup: Some(1.0),
                ..Default::default()
            });
        let r = validate_model(&spec, 200, 3);
        let c = r.check("drift bound").unwrap();
        assert!(c.passed && c.observed <= 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = base().with_b_circ(|_, x, u, out| out[0] = x[0].sin() + u[0]);
        assert_eq!(validate_model(&spec, 30, 9), validate_model(&spec, 30, 9));
    }
}
