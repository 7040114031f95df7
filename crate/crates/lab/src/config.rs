//! Experiment configuration files.
//!
//! ```toml
//! seed = 7
//! threads = 2            # optional, defaults to the rayon default
//!
//! [model]
//! name = "lq1d"          # lq1d | zero-drift | congestion1d
//! kappa = 0.5            # any catalog parameter, others keep defaults
//!
//! [experiment]
//! kind = "converse"      # nash-to-mfg | converse | chaos | mfc-equivalence
//!                        # | noise-recovery | fp-residual
//! players = [8, 32, 128]
//! ```
//!
//! Every table rejects unknown keys. The top-level seed drives every random
//! stream of the run, including the equilibrium solver.

use mfgc_core::mfc::MfcBudget;
use mfgc_core::mfg::FixedPointConfig;
use mfgc_core::model::catalog::ModelConfig;
use mfgc_core::nplayer::ResponseClass;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub model: ModelConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    NashToMfg(NashToMfgConfig),
    Converse(ConverseConfig),
    Chaos(ChaosConfig),
    MfcEquivalence(MfcConfig),
    NoiseRecovery(RecoveryConfig),
    FpResidual(FpConfig),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::NashToMfg(_) => "nash-to-mfg",
            ExperimentConfig::Converse(_) => "converse",
            ExperimentConfig::Chaos(_) => "chaos",
            ExperimentConfig::MfcEquivalence(_) => "mfc-equivalence",
            ExperimentConfig::NoiseRecovery(_) => "noise-recovery",
            ExperimentConfig::FpResidual(_) => "fp-residual",
        }
    }
}

fn default_players() -> Vec<usize> {
    vec![8, 32, 128]
}

/// Approximate Nash profiles by iterated best response from the lifted
/// equilibrium, compared in law with the mean field solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashToMfgConfig {
    pub players: Vec<usize>,
    pub equilibrium: FixedPointConfig,
    pub response: ResponseClass,
    /// Monte Carlo paths scoring each best-response candidate.
    pub response_paths: usize,
    /// Best-response rounds; 0 keeps the lifted equilibrium policy.
    pub rounds: usize,
    /// Independent N-player replicates per N (for the standard error).
    pub replicates: usize,
}

impl Default for NashToMfgConfig {
    fn default() -> Self {
        NashToMfgConfig {
            players: default_players(),
            equilibrium: FixedPointConfig::default(),
            response: ResponseClass::default(),
            response_paths: 500,
            rounds: 1,
            replicates: 4,
        }
    }
}

/// Nash gaps of the lifted equilibrium policy and, optionally, the law
/// distances of its empirical flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverseConfig {
    pub players: Vec<usize>,
    pub equilibrium: FixedPointConfig,
    pub response: ResponseClass,
    pub gap_paths: usize,
    /// 0 skips the distance curve.
    pub replicates: usize,
}

impl Default for ConverseConfig {
    fn default() -> Self {
        ConverseConfig {
            players: default_players(),
            equilibrium: FixedPointConfig::default(),
            response: ResponseClass::default(),
            gap_paths: 500,
            replicates: 0,
        }
    }
}

/// E[W_1(φ^N_T, μ_T)] for the lifted equilibrium policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub players: Vec<usize>,
    pub equilibrium: FixedPointConfig,
    pub paths: usize,
    pub particles: usize,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            players: default_players(),
            equilibrium: FixedPointConfig::default(),
            paths: 64,
            particles: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfcConfig {
    pub budget: MfcBudget,
    /// |V^c − V^o| ≤ max(rel_tol |V^c|, 3 combined SE).
    pub rel_tol: f64,
    /// Relative tolerance against the Riccati value (lq1d only).
    pub oracle_tol: f64,
    /// Empty skips the Pareto curve.
    pub pareto_players: Vec<usize>,
    pub pareto_paths: usize,
    pub pareto_tol: f64,
}

impl Default for MfcConfig {
    fn default() -> Self {
        MfcConfig {
            budget: MfcBudget::default(),
            rel_tol: 0.05,
            oracle_tol: 0.05,
            pareto_players: vec![8, 128],
            pareto_paths: 500,
            pareto_tol: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub steps: usize,
    /// Particle counts, ascending.
    pub particles: Vec<usize>,
    /// Independent runs per particle count; errors are averaged over them.
    pub seeds: usize,
    /// Bound on the sup error at the largest particle count (every run).
    pub tol: f64,
    /// Accepted range of mean error(smallest M) / mean error(largest M).
    pub ratio_range: Option<(f64, f64)>,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            steps: 100,
            particles: vec![100, 10_000],
            seeds: 8,
            tol: 0.05,
            ratio_range: Some((3.0, 30.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpConfig {
    /// Step counts, ascending (each halving Δt).
    pub steps: Vec<usize>,
    pub particles: usize,
    /// Independent runs per Δt; the slope uses their averaged residuals.
    pub replicates: usize,
    /// Bound on the max residual of every run.
    pub tol: f64,
    /// Accepted range of the log-log slope of the averaged max residual
    /// against Δt.
    pub slope_range: Option<(f64, f64)>,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            steps: vec![100, 200, 400],
            particles: 10_000,
            replicates: 8,
            tol: 0.05,
            slope_range: Some((0.5, 1.5)),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|b| *b == b'\n')
        .count()
        + 1
}

/// Line of the first `key = ...` assignment, if any.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

fn line_of_table(text: &str, table: &str) -> Option<usize> {
    let header = format!("[{table}]");
    text.lines().position(|l| l.trim() == header).map(|i| i + 1)
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigError::new(line, e.message().trim().to_string())
        })?;
        cfg.validate().map_err(|(key, msg)| {
            let line = line_of_key(text, key).or_else(|| line_of_table(text, "experiment"));
            ConfigError::new(line, msg)
        })?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(None, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolved configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Semantic checks; the error names the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.threads == Some(0) {
            return Err(("threads", "threads must be at least 1".into()));
        }
        if let Err(e) = self.model.build() {
            return Err(("name", e.to_string()));
        }
        let players = |p: &[usize]| -> Result<(), (&'static str, String)> {
            if p.is_empty() || p.contains(&0) {
                return Err((
                    "players",
                    "players must be a nonempty list of positive counts".into(),
                ));
            }
            if p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(("players", "players must be strictly increasing".into()));
            }
            Ok(())
        };
        let positive = |key: &'static str, v: usize| {
            if v == 0 {
                Err((key, format!("{key} must be positive")))
            } else {
                Ok(())
            }
        };
        let eq = |e: &FixedPointConfig| -> Result<(), (&'static str, String)> {
            positive("scenarios", e.scenarios)?;
            positive("particles", e.particles)?;
            positive("steps", e.steps)?;
            if !(e.damping > 0.0 && e.damping <= 1.0) {
                return Err(("damping", "damping must lie in (0, 1]".into()));
            }
            if !(e.tol > 0.0) {
                return Err(("tol", "tol must be positive".into()));
            }
            Ok(())
        };
        match &self.experiment {
            ExperimentConfig::NashToMfg(c) => {
                players(&c.players)?;
                eq(&c.equilibrium)?;
                positive("response_paths", c.response_paths)?;
                positive("replicates", c.replicates)?;
            }
            ExperimentConfig::Converse(c) => {
                players(&c.players)?;
                eq(&c.equilibrium)?;
                positive("gap_paths", c.gap_paths)?;
            }
            ExperimentConfig::Chaos(c) => {
                players(&c.players)?;
                eq(&c.equilibrium)?;
                positive("paths", c.paths)?;
                positive("particles", c.particles)?;
            }
            ExperimentConfig::MfcEquivalence(c) => {
                if !c.pareto_players.is_empty() {
                    players(&c.pareto_players).map_err(|(_, m)| ("pareto_players", m))?;
                }
                positive("steps", c.budget.steps)?;
            }
            ExperimentConfig::NoiseRecovery(c) => {
                positive("steps", c.steps)?;
                positive("seeds", c.seeds)?;
                if c.particles.is_empty()
                    || c.particles.contains(&0)
                    || c.particles.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err((
                        "particles",
                        "particles must be a strictly increasing list of positive counts".into(),
                    ));
                }
            }
            ExperimentConfig::FpResidual(c) => {
                positive("particles", c.particles)?;
                positive("replicates", c.replicates)?;
                if c.steps.is_empty()
                    || c.steps.contains(&0)
                    || c.steps.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err((
                        "steps",
                        "steps must be a strictly increasing list of positive counts".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = LabConfig::from_toml(
            "[model]\nname = \"zero-drift\"\n[experiment]\nkind = \"fp-residual\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(
            c.experiment,
            ExperimentConfig::FpResidual(FpConfig::default())
        );
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = LabConfig::from_toml(
            "seed = 3\n[model]\nname = \"lq1d\"\nkappa = 0.2\n[experiment]\nkind = \"converse\"\n",
        )
        .unwrap();
        assert_eq!(LabConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_model_points_at_its_line() {
        let e = LabConfig::from_toml(
            "seed = 3\n\n[model]\nname = \"lq9\"\n[experiment]\nkind = \"chaos\"\n",
        )
        .unwrap_err();
        assert!(matches!(e.line, Some(3 | 4)), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let e = LabConfig::from_toml(
            "[model]\nname = \"lq1d\"\n[experiment]\nkind = \"chaos\"\nplayers = [32, 8]\n",
        )
        .unwrap_err();
        assert_eq!(e.line, Some(5));
    }
}
