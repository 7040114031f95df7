//! Built-in models addressable by name: `lq1d`, `zero-drift`, `congestion1d`.

use serde::{Deserialize, Serialize};

use super::{Bounds, ControlGrid, InitialLaw, ModelSpec};
use crate::error::{Error, Result};

pub const NAMES: [&str; 3] = ["lq1d", "zero-drift", "congestion1d"];

/// Linear-quadratic model: b* = κ E[x], b° = u,
/// L = −r u² − q (x − c E[x])², g = −q_T (x − c_T E[x])².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub kappa: f64,
    pub c: f64,
    pub c_terminal: f64,
    pub r: f64,
    pub q: f64,
    pub q_terminal: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub xi_mean: f64,
    pub xi_sd: f64,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub u_count: usize,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams {
            kappa: 0.5,
            c: 1.0,
            c_terminal: 1.0,
            r: 1.0,
            q: 1.0,
            q_terminal: 1.0,
            sigma: 1.0,
            sigma0: 1.0,
            xi_mean: 0.0,
            xi_sd: 1.0,
            horizon: 1.0,
            u_min: -4.0,
            u_max: 4.0,
            u_count: 81,
        }
    }
}

/// No drift and no reward; `noise_drift` ≠ 0 adds the measure-free drift
/// −noise_drift · B(t_ℓ), with t_ℓ the last multiple of `noise_stride` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroDriftParams {
    pub sigma: f64,
    pub sigma0: f64,
    pub xi_mean: f64,
    /// 0 gives a deterministic initial state.
    pub xi_sd: f64,
    pub horizon: f64,
    pub noise_drift: f64,
    pub noise_stride: usize,
}

impl Default for ZeroDriftParams {
    fn default() -> Self {
        ZeroDriftParams {
            sigma: 1.0,
            sigma0: 1.0,
            xi_mean: 0.0,
            xi_sd: 1.0,
            horizon: 1.0,
            noise_drift: 0.0,
            noise_stride: 8,
        }
    }
}

/// Congestion-type game of controls: b° = u,
/// L = γ x E_ν̄[u] − φ x² − r u², g = −a x².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CongestionParams {
    pub gamma: f64,
    pub phi: f64,
    pub r: f64,
    pub a_terminal: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub xi_mean: f64,
    pub xi_sd: f64,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub u_count: usize,
}

impl Default for CongestionParams {
    fn default() -> Self {
        CongestionParams {
            gamma: 0.5,
            phi: 0.1,
            r: 1.0,
            a_terminal: 1.0,
            sigma: 0.5,
            sigma0: 0.5,
            xi_mean: 1.0,
            xi_sd: 0.5,
            horizon: 1.0,
            u_min: -2.0,
            u_max: 2.0,
            u_count: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ModelConfig {
    Lq1d(LqParams),
    ZeroDrift(ZeroDriftParams),
    Congestion1d(CongestionParams),
}

impl ModelConfig {
    /// Default parameters for a catalog name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lq1d" => Ok(ModelConfig::Lq1d(LqParams::default())),
            "zero-drift" => Ok(ModelConfig::ZeroDrift(ZeroDriftParams::default())),
            "congestion1d" => Ok(ModelConfig::Congestion1d(CongestionParams::default())),
            other => Err(Error::Model(format!(
                "unknown model '{other}' (known: {})",
                NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Lq1d(_) => "lq1d",
            ModelConfig::ZeroDrift(_) => "zero-drift",
            ModelConfig::Congestion1d(_) => "congestion1d",
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::Lq1d(p) => lq1d(p),
            ModelConfig::ZeroDrift(p) => zero_drift(p),
            ModelConfig::Congestion1d(p) => congestion1d(p),
        }
    }
}

fn initial(mean: f64, sd: f64) -> InitialLaw {
    if sd == 0.0 {
        InitialLaw::Dirac(vec![mean])
    } else {
        InitialLaw::Normal {
            mean: vec![mean],
            sd,
        }
    }
}

fn finalize(spec: ModelSpec) -> Result<ModelSpec> {
    spec.check()?;
    Ok(spec)
}

pub fn lq1d(p: &LqParams) -> Result<ModelSpec> {
    let u = ControlGrid::uniform_1d(p.u_min, p.u_max, p.u_count)?;
    let LqParams {
        kappa,
        c,
        c_terminal,
        r,
        q,
        q_terminal,
        ..
    } = *p;
    let spec = ModelSpec::new("lq1d", 1, p.horizon, u)?
        .with_b_star(move |_, nu, out| out[0] = kappa * nu.mean_state()[0])
        .with_b_circ(|_, _, u, out| out[0] = u[0])
        .with_constant_sigma(vec![p.sigma])
        .with_sigma0(vec![p.sigma0])
        .with_l_star(move |_, x, nu| {
            let d = x[0] - c * nu.mean_state()[0];
            -q * d * d
        })
        .with_l_circ(move |_, _, _, u| -r * u[0] * u[0])
        .with_g(move |x, nu| {
            let d = x[0] - c_terminal * nu.mean_state()[0];
            -q_terminal * d * d
        })
        .with_initial(initial(p.xi_mean, p.xi_sd))
        .with_bounds(Bounds {
            drift_lipschitz: Some(0.0),
            ..Default::default()
        });
    finalize(spec)
}

pub fn zero_drift(p: &ZeroDriftParams) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(
        "zero-drift",
        1,
        p.horizon,
        ControlGrid::uniform_1d(0.0, 0.0, 1)?,
    )?
    .with_constant_sigma(vec![p.sigma])
    .with_sigma0(vec![p.sigma0])
    .with_initial(initial(p.xi_mean, p.xi_sd))
    .with_bounds(Bounds {
        drift_sup: Some(0.0),
        reward_sup: Some(0.0),
        ..Default::default()
    });
    if p.noise_drift != 0.0 {
        let beta = p.noise_drift;
        spec = spec.with_noise_feedback(p.noise_stride, move |_, b, out| out[0] = -beta * b[0]);
        spec.bounds.drift_sup = None;
    }
    finalize(spec)
}

pub fn congestion1d(p: &CongestionParams) -> Result<ModelSpec> {
    let u = ControlGrid::uniform_1d(p.u_min, p.u_max, p.u_count)?;
    let CongestionParams {
        gamma,
        phi,
        r,
        a_terminal,
        ..
    } = *p;
    let spec = ModelSpec::new("congestion1d", 1, p.horizon, u)?
        .with_b_circ(|_, _, u, out| out[0] = u[0])
        .with_constant_sigma(vec![p.sigma])
        .with_sigma0(vec![p.sigma0])
        .with_l_star(move |_, x, nu| gamma * x[0] * nu.mean_control()[0] - phi * x[0] * x[0])
        .with_l_circ(move |_, _, _, u| -r * u[0] * u[0])
        .with_g(move |x, _| -a_terminal * x[0] * x[0])
        .with_initial(initial(p.xi_mean, p.xi_sd));
    finalize(spec)
}
