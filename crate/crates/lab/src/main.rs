use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mfgc_core::measures::io::write_flow_csv;
use mfgc_core::mfc::{
    closed_loop_value, open_loop_value, pareto_limit_experiment, MfcBudget, SearchSettings,
};
use mfgc_core::mfg::{fokker_planck_residual, mfg_fixed_point, FixedPointConfig, TestFunction};
use mfgc_core::model::catalog::ModelConfig;
use mfgc_core::model::{ModelSpec, NoisePath};
use mfgc_core::noise_recovery::{compare_paths, recover_noise_global, recover_noise_recursive};
use mfgc_core::nplayer::{
    game_noise, lift_policy, nash_gap, player_costs, simulate_game, ResponseClass,
};
use mfgc_core::policy::ConstantPolicy;
use mfgc_lab::experiments::riccati_mean_error;
use mfgc_lab::{run_experiment, write_outcome, ConfigError, LabConfig, LabError};

#[derive(Parser)]
#[command(
    name = "mfgc-lab",
    version,
    about = "Mean field games with common noise: simulations and convergence studies"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MFGC_LAB_OUT", default_value = "mfgc-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        config: PathBuf,
        /// Worker threads (overrides the config).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Simulate the N-player game under the lifted zero-control policy.
    Nplayer {
        /// Catalog name or a TOML file with a model table.
        #[arg(long, default_value = "lq1d")]
        model: String,
        #[arg(long, default_value_t = 8)]
        players: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        emit: Emit,
        /// Also estimate the Nash gap of player 0.
        #[arg(long)]
        gap: bool,
    },
    /// Solve the mean field equilibrium by damped Picard iteration.
    Mfg {
        #[arg(long, default_value = "lq1d")]
        model: String,
        #[arg(long, default_value_t = 16)]
        scenarios: usize,
        #[arg(long, default_value_t = 10_000)]
        particles: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value_t = 8)]
        max_iter: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Recover the common noise from a simulated flow.
    Recover {
        #[arg(long, default_value = "zero-drift")]
        model: String,
        #[arg(long, default_value_t = 10_000)]
        particles: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Closed- and open-loop mean field control values.
    Mfc {
        #[arg(long, default_value = "lq1d")]
        model: String,
        /// Objective evaluations per optimizer.
        #[arg(long, default_value_t = 400)]
        budget: usize,
        #[arg(long, default_value_t = 8)]
        scenarios: usize,
        #[arg(long, default_value_t = 1000)]
        particles: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Pareto values of the lifted closed-loop optimum over N.
    Pareto {
        #[arg(long, default_value = "lq1d")]
        model: String,
        #[arg(long, default_value_t = 400)]
        budget: usize,
        #[arg(long, default_value_t = 8)]
        scenarios: usize,
        #[arg(long, default_value_t = 1000)]
        particles: usize,
        #[arg(long, value_delimiter = ',', default_value = "8,32,128")]
        players: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Tolerance,
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mfgc_core::Error> for Failure {
    fn from(e: mfgc_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn model_config(arg: &str) -> Result<ModelConfig, Failure> {
    if arg.ends_with(".toml") {
        let text =
            std::fs::read_to_string(arg).map_err(|e| Failure::Config(format!("{arg}: {e}")))?;
        return toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            Failure::Config(ConfigError::new(line, e.message().trim()).to_string())
        });
    }
    ModelConfig::by_name(arg).map_err(|e| Failure::Config(e.to_string()))
}

fn build(arg: &str) -> Result<(ModelConfig, ModelSpec), Failure> {
    let cfg = model_config(arg)?;
    let spec = cfg.build().map_err(|e| Failure::Config(e.to_string()))?;
    Ok((cfg, spec))
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Tolerance) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let out = &cli.out;
    match &cli.command {
        Command::Run { config, threads } => {
            let mut cfg = LabConfig::from_file(config)?;
            if threads.is_some() {
                cfg.threads = *threads;
            }
            let outcome = match run_experiment(&cfg) {
                Ok(o) => o,
                Err(LabError::Config(e)) => return Err(e.into()),
                Err(LabError::Core(e)) => return Err(e.into()),
            };
            write_outcome(out, &outcome).with_context(|| format!("writing {}", out.display()))?;
            for c in &outcome.checks {
                println!(
                    "{} {}: {} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.observed,
                    c.rule
                );
            }
            if !outcome.passed() {
                return Err(Failure::Tolerance);
            }
        }
        Command::Nplayer {
            model,
            players,
            steps,
            paths,
            seed,
            emit,
            gap,
        } => {
            let (_, spec) = build(model)?;
            if *players == 0 || *paths == 0 {
                return Err(Failure::Config("players and paths must be positive".into()));
            }
            let grid = spec.grid(*steps)?;
            let zero = spec.controls.nearest(&vec![0.0; spec.controls.dim()]);
            let set = lift_policy(Arc::new(ConstantPolicy(zero)), *players)?;
            let mut rows = Vec::new();
            let mut costs = String::from("path,player,reward\n");
            for p in 0..*paths {
                let tr = simulate_game(
                    &spec,
                    &set,
                    game_noise(&grid, spec.n, *seed, p),
                    *seed,
                    p as u64,
                )?;
                if p == 0 {
                    let mut buf = Vec::new();
                    write_flow_csv(&mut buf, &tr.empirical_flow()?)?;
                    write(out, "snapshots.csv", buf)?;
                }
                for (i, c) in player_costs(&spec, &tr).iter().enumerate() {
                    let _ = writeln!(costs, "{p},{i},{c}");
                }
                for k in 0..=grid.steps() {
                    for i in 0..*players {
                        let u = tr
                            .controls
                            .get(k)
                            .map(|c| spec.controls.point(c[i]).to_vec());
                        rows.push((p, k, grid.time(k), i, tr.state(k, i).to_vec(), u));
                    }
                }
            }
            match emit {
                Emit::Csv => {
                    let mut s = String::from("path,step,t,player,state,control\n");
                    for (p, k, t, i, x, u) in &rows {
                        let join = |v: &[f64]| {
                            v.iter()
                                .map(|a| a.to_string())
                                .collect::<Vec<_>>()
                                .join(" ")
                        };
                        let _ = writeln!(
                            s,
                            "{p},{k},{t},{i},{},{}",
                            join(x),
                            u.as_deref().map(join).unwrap_or_default()
                        );
                    }
                    write(out, "trajectories.csv", s)?;
                }
                Emit::Json => {
                    let v: Vec<_> = rows
                        .iter()
                        .map(|(p, k, t, i, x, u)| serde_json::json!({"path": p, "step": k, "t": t, "player": i, "state": x, "control": u}))
                        .collect();
                    write(out, "trajectories.json", json(&v))?;
                }
            }
            write(out, "rewards.csv", costs)?;
            if *gap {
                let rep = nash_gap(
                    &spec,
                    &set,
                    &ResponseClass::default(),
                    &grid,
                    (*paths).max(32),
                    *seed,
                )?;
                write(out, "gap.json", json(&rep))?;
                println!(
                    "gap of player 0: {} (se {})",
                    rep.gaps[0].gap.mean, rep.gaps[0].gap.se
                );
            }
        }
        Command::Mfg {
            model,
            scenarios,
            particles,
            steps,
            damping,
            tol,
            max_iter,
            seed,
        } => {
            let (mcfg, spec) = build(model)?;
            let cfg = FixedPointConfig {
                scenarios: *scenarios,
                particles: *particles,
                steps: *steps,
                damping: *damping,
                tol: *tol,
                max_iter: *max_iter,
                seed: *seed,
                ..Default::default()
            };
            if !(cfg.damping > 0.0 && cfg.damping <= 1.0) || !(cfg.tol > 0.0) {
                return Err(Failure::Config(
                    "damping must lie in (0, 1] and tol must be positive".into(),
                ));
            }
            let sol = mfg_fixed_point(&spec, &cfg)?;
            let mut report = serde_json::to_value(&sol).expect("solution serializes");
            if let ModelConfig::Lq1d(p) = &mcfg {
                report["riccati_mean_error"] = riccati_mean_error(p, &sol).into();
            }
            report["config"] = serde_json::to_value(&cfg).expect("config serializes");
            write(out, "equilibrium.json", json(&report))?;
            let mut fp = String::from("scenario,function,t,residual\n");
            for (s, sc) in sol.scenarios.scenarios().iter().enumerate() {
                let mut buf = Vec::new();
                write_flow_csv(&mut buf, &sc.flow)?;
                write(out, &format!("flow_{s:03}.csv"), buf)?;
                let res = fokker_planck_residual(
                    &spec,
                    &sc.flow,
                    &sc.noise,
                    &TestFunction::dictionary(),
                )?;
                for (f, row) in res.functions.iter().zip(&res.values) {
                    for (t, v) in res.times.iter().zip(row) {
                        let _ = writeln!(fp, "{s},{f},{t},{v}");
                    }
                }
            }
            write(out, "fp_residual.csv", fp)?;
            println!(
                "converged: {} after {} iterations; epsilon {} (se {})",
                sol.converged, sol.iterations, sol.epsilon.mean, sol.epsilon.se
            );
        }
        Command::Recover {
            model,
            particles,
            steps,
            seed,
        } => {
            let (_, spec) = build(model)?;
            let grid = spec.grid(*steps)?;
            let truth = NoisePath::sample(&grid, spec.n, *seed, 0);
            let zero = spec.controls.nearest(&vec![0.0; spec.controls.dim()]);
            let flow = mfgc_core::mfg::simulate_conditional_mkv(
                &spec,
                &ConstantPolicy(zero),
                &truth,
                *particles,
                *seed,
            )?;
            let rec = match &spec.noise_feedback {
                Some(fb) => recover_noise_recursive(&spec, &flow, fb.stride)?,
                None => recover_noise_global(&spec, &flow)?,
            };
            let (_, sup, worst) = compare_paths(&rec, &truth)?;
            let mut s = String::from("t,dim,true,recovered\n");
            for k in 0..=grid.steps() {
                for d in 0..spec.n {
                    let _ = writeln!(
                        s,
                        "{},{d},{},{}",
                        grid.time(k),
                        truth.value(k)[d],
                        rec.value(k)[d]
                    );
                }
            }
            write(out, "recovered.csv", s)?;
            println!("sup error {sup} at node {worst}");
        }
        Command::Mfc {
            model,
            budget,
            scenarios,
            particles,
            seed,
        } => {
            let (_, spec) = build(model)?;
            let b = budget_of(*budget, *scenarios, *particles);
            let closed = closed_loop_value(&spec, &b, *seed)?;
            let open = open_loop_value(&spec, &b, *seed)?;
            write(out, "closed_loop.json", json(&closed))?;
            write(out, "open_loop.json", json(&open))?;
            println!(
                "closed {} (se {}), open {} (se {})",
                closed.value.mean, closed.value.se, open.value.mean, open.value.se
            );
        }
        Command::Pareto {
            model,
            budget,
            scenarios,
            particles,
            players,
            paths,
            seed,
        } => {
            let (_, spec) = build(model)?;
            if players.is_empty()
                || players.windows(2).any(|w| w[0] >= w[1])
                || players.contains(&0)
            {
                return Err(Failure::Config(
                    "players must be a strictly increasing list of positive counts".into(),
                ));
            }
            let b = budget_of(*budget, *scenarios, *particles);
            let closed = closed_loop_value(&spec, &b, *seed)?;
            let curve = pareto_limit_experiment(&spec, players, &closed, b.steps, *paths, *seed)?;
            let mut s = String::from("players,pareto_value,se\n");
            for p in &curve.points {
                let _ = writeln!(s, "{},{},{}", p.players, p.value.mean, p.value.se);
            }
            let _ = writeln!(s, "mfc,{},{}", curve.mfc_value.mean, curve.mfc_value.se);
            write(out, "pareto.csv", s)?;
        }
    }
    Ok(())
}

fn budget_of(evaluations: usize, scenarios: usize, particles: usize) -> MfcBudget {
    MfcBudget {
        scenarios,
        particles,
        search: SearchSettings {
            max_evaluations: evaluations,
            ..Default::default()
        },
        ..Default::default()
    }
}
