//! Weak-form residual of the stochastic Fokker–Planck equation.
//!
//! With Y = X − σ0 B the particles solve dY = b dt + σ dW, so for a bounded
//! test function f
//!
//! N_t(f) = ⟨f(· − σ0 B_t), μ_t⟩ − ⟨f, μ_0⟩
//!          − ∫_0^t [⟨b*(r, ν̄_r) f'(· − σ0 B_r), μ_r⟩ + ⟨L°_r f(· − σ0 B_r), ν̄_r⟩] dr
//!
//! vanishes, where L°_r f(x, u) = b°(r, x, u) f'(x) + ½ σσᵀ f''(x). The time
//! integral uses the left-point rule on the flow's grid.

use serde::Serialize;

use crate::error::{domain, Result};
use crate::measures::MeasureFlow;
use crate::model::{ModelSpec, NoisePath};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Cos {
        k: f64,
    },
    Sin {
        k: f64,
    },
    /// exp(−(x − center)² / (2 width²))
    Bump {
        center: f64,
        width: f64,
    },
    /// Polynomial with the given coefficients (constant first); only
    /// constants are bounded and accepted.
    Poly {
        coeffs: Vec<f64>,
    },
}

impl TestFunction {
    /// The default dictionary {cos x, sin x, cos 2x, Gaussian bump}.
    pub fn dictionary() -> Vec<TestFunction> {
        vec![
            TestFunction::Cos { k: 1.0 },
            TestFunction::Sin { k: 1.0 },
            TestFunction::Cos { k: 2.0 },
            TestFunction::Bump {
                center: 0.0,
                width: 1.0,
            },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Cos { k } => format!("cos({k}x)"),
            TestFunction::Sin { k } => format!("sin({k}x)"),
            TestFunction::Bump { center, width } => format!("bump({center},{width})"),
            TestFunction::Poly { coeffs } => format!("poly{coeffs:?}"),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            TestFunction::Bump { width, .. } if !(*width > 0.0) => {
                Err(domain("bump width must be positive"))
            }
            TestFunction::Poly { coeffs } if coeffs.iter().skip(1).any(|c| *c != 0.0) => Err(
                domain(format!("test function {} is unbounded", self.name())),
            ),
            _ => Ok(()),
        }
    }

    /// (f, f', f'') at x.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            TestFunction::Cos { k } => {
                let (s, c) = (k * x).sin_cos();
                (c, -k * s, -k * k * c)
            }
            TestFunction::Sin { k } => {
                let (s, c) = (k * x).sin_cos();
                (s, k * c, -k * k * s)
            }
            TestFunction::Bump { center, width } => {
                let z = (x - center) / width;
                let e = (-0.5 * z * z).exp();
                (e, -z / width * e, (z * z - 1.0) / (width * width) * e)
            }
            TestFunction::Poly { ref coeffs } => (coeffs.first().copied().unwrap_or(0.0), 0.0, 0.0),
        }
    }
}

/// Residual table: `values[f][k]` = N_{t_k}(f).
#[derive(Debug, Clone, Serialize)]
pub struct FpResidual {
    pub functions: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FpResidual {
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_abs_at(&self, k: usize) -> f64 {
        self.values.iter().fold(0.0, |a, row| a.max(row[k].abs()))
    }
}

/// N_t(f) for every test function and grid node. The flow supplies both μ
/// (its state marginals) and ν̄ (its frames).
pub fn fokker_planck_residual(
    spec: &ModelSpec,
    flow: &MeasureFlow,
    b: &NoisePath,
    tests: &[TestFunction],
) -> Result<FpResidual> {
    if spec.n != 1 {
        return Err(domain("the residual dictionary is one-dimensional"));
    }
    if b.grid() != flow.grid() {
        return Err(domain("flow and noise path use different grids"));
    }
    for f in tests {
        f.check()?;
    }
    let grid = flow.grid();
    let dt = grid.dt();
    let kk = grid.steps();
    let s0 = spec.sigma0[0];
    let mut values = vec![vec![0.0; kk + 1]; tests.len()];
    let mut integral = vec![0.0; tests.len()];
    let f0 = flow.frame(0);
    let base: Vec<f64> = tests
        .iter()
        .map(|f| {
            (0..f0.len())
                .map(|a| f0.weight(a) * f.eval(f0.state_coord(a, 0)).0)
                .sum()
        })
        .collect();
    let (mut bs, mut bc, mut sg, mut nf) = ([0.0], [0.0], [0.0], [0.0]);
    for k in 0..=kk {
        let t = grid.time(k);
        let frame = flow.frame(k);
        let shift = s0 * b.value(k)[0];
        for (fi, f) in tests.iter().enumerate() {
            let mut pairing = 0.0;
            for a in 0..frame.len() {
                pairing += frame.weight(a) * f.eval(frame.state_coord(a, 0) - shift).0;
            }
            values[fi][k] = pairing - base[fi] - integral[fi];
        }
        if k == kk {
            break;
        }
        (spec.b_star)(t, frame, &mut bs);
        if let Some(fb) = &spec.noise_feedback {
            let node = (k / fb.stride) * fb.stride;
            (fb.drift)(t, b.value(node), &mut nf);
            bs[0] += nf[0];
        }
        for (fi, f) in tests.iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..frame.len() {
                let x = frame.state_coord(a, 0);
                (spec.b_circ)(t, &[x], frame.control(a), &mut bc);
                (spec.sigma)(t, &[x], &mut sg);
                let (_, d1, d2) = f.eval(x - shift);
                acc += frame.weight(a) * ((bs[0] + bc[0]) * d1 + 0.5 * sg[0] * sg[0] * d2);
            }
            integral[fi] += dt * acc;
        }
    }
    Ok(FpResidual {
        functions: tests.iter().map(|f| f.name()).collect(),
        times: grid.times(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for f in TestFunction::dictionary() {
            for x in [-1.3, 0.0, 0.4, 2.2] {
                let (v, d1, d2) = f.eval(x);
                let (vp, d1p, _) = f.eval(x + h);
                let (vm, d1m, _) = f.eval(x - h);
                assert!(((vp - vm) / (2.0 * h) - d1).abs() < 1e-8);
                assert!(((d1p - d1m) / (2.0 * h) - d2).abs() < 1e-8);
                assert!(v.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn unbounded_rejected() {
        assert!(TestFunction::Poly {
            coeffs: vec![0.0, 1.0]
        }
        .check()
        .is_err());
        assert!(TestFunction::Poly { coeffs: vec![2.0] }.check().is_ok());
    }
}
