//! Command-line driver for the hybrid pipeline: stage commands, the full run,
//! simulation, the baseline comparison and region inspection.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hysteresis_rl::config::{NoiseMode, RunConfig};
use hysteresis_rl::envs::{EnvKind, State};
use hysteresis_rl::error::{ConfigError, RegionError};
use hysteresis_rl::harness::{
    compare, comparison_ics, format_width, load_run, overlap_ics, run_pipeline, run_steps, sided_consistency,
    NoiseModel, StepSummary, StuckCriterion, STEP_NAMES,
};
use hysteresis_rl::hybrid::{solve, HybridState};
use hysteresis_rl::region::{Grid, Region};

#[derive(Parser)]
#[command(name = "hysteresis-rl", version, about = "Hysteresis-based hybrid reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline policy (step 1).
    Train(RunArgs),
    /// Locate the critical set and partition the state space (steps 2-3).
    FindCritical(RunArgs),
    /// Restrict the baseline and extend both partitions (steps 4-5).
    Extend(RunArgs),
    /// Retrain one policy per extended region and assemble the hybrid system (steps 6-7).
    Hybridize(RunArgs),
    /// Run the whole pipeline, optionally resuming from a later step.
    #[command(alias = "hyrl")]
    RunAll {
        #[command(flatten)]
        run: RunArgs,
        /// First step to run, as `stepN`, `N` or a step name; earlier artifacts are loaded.
        #[arg(long, default_value = "step1", value_parser = parse_step)]
        resume_from: u8,
    },
    /// Simulate the hybrid system (or the baseline) from one initial state and emit CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        noise: NoiseArgs,
        /// Initial state as `x,y`.
        #[arg(long, value_parser = parse_state, conflicts_with = "angle", required_unless_present = "angle")]
        ic: Option<State>,
        /// Initial angle on the unit circle, in multiples of π.
        #[arg(long)]
        angle: Option<f64>,
        /// Initial logic variable.
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
        q0: u8,
        /// Simulate the baseline policy instead of the hybrid system.
        #[arg(long)]
        baseline: bool,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare baseline and hybrid system from the standard initial states.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Print the extent of a saved region file.
    InspectRegion {
        path: PathBuf,
        /// Also draw the region as a character map.
        #[arg(long)]
        map: bool,
    },
    /// Print the default configuration of an environment as TOML.
    Config {
        #[arg(long, value_parser = parse_env)]
        env: EnvKind,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment, required without `--config`.
    #[arg(long, value_parser = parse_env, required_unless_present = "config")]
    env: Option<EnvKind>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Measurement-noise magnitude.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    noise_mode: Option<NoiseModeArg>,
    /// Simulated duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseModeArg {
    Uniform,
    Adversarial,
}

impl From<NoiseModeArg> for NoiseMode {
    fn from(m: NoiseModeArg) -> Self {
        match m {
            NoiseModeArg::Uniform => NoiseMode::Uniform,
            NoiseModeArg::Adversarial => NoiseMode::Adversarial,
        }
    }
}

fn parse_env(s: &str) -> Result<EnvKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_step(s: &str) -> Result<u8, String> {
    let digits = s.strip_prefix("step").unwrap_or(s);
    let step = match digits.parse::<u8>() {
        Ok(n) => n,
        Err(_) => STEP_NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| i as u8 + 1)
            .ok_or_else(|| format!("unknown step `{s}`"))?,
    };
    if (1..=7).contains(&step) {
        Ok(step)
    } else {
        Err(format!("step must be between 1 and 7, got {step}"))
    }
}

fn parse_state(s: &str) -> Result<State, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x = x.parse::<f64>().map_err(|e| e.to_string())?;
            let y = y.parse::<f64>().map_err(|e| e.to_string())?;
            Ok(State::new(x, y))
        }
        _ => Err("expected `x,y`".to_string()),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::for_env(self.env.expect("clap requires --env without --config")),
        };
        if let Some(env) = self.env {
            if env != cfg.env {
                bail!("--env {} contradicts the config's environment {}", env.name(), cfg.env.name());
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory of an existing run.
    fn run_dir(&self) -> Result<PathBuf> {
        match (&self.out, &self.config) {
            (Some(out), _) => Ok(out.clone()),
            _ => Ok(self.resolve()?.out_dir),
        }
    }
}

fn print_step(s: &StepSummary) {
    println!("step {} {}: {}", s.step, s.name, s.detail);
}

fn stages(run: &RunArgs, first: u8, last: u8) -> Result<()> {
    let cfg = run.resolve()?;
    run_steps(&cfg, first, last, print_step)?;
    Ok(())
}

fn noise_model(cfg: &RunConfig, args: &NoiseArgs) -> (NoiseModel, f64) {
    let h = &cfg.harness;
    let noise = NoiseModel {
        magnitude: args.noise.unwrap_or(h.noise),
        mode: args.noise_mode.map(NoiseMode::from).unwrap_or(h.noise_mode),
        seed: cfg.seed,
    };
    (noise, args.duration.unwrap_or_else(|| h.duration_for(cfg.env)))
}

fn cmd_simulate(
    run: &RunArgs,
    noise: &NoiseArgs,
    ic: Option<State>,
    angle: Option<f64>,
    q0: u8,
    baseline: bool,
    output: Option<&Path>,
) -> Result<()> {
    let (cfg, base, sys) = load_run(&run.run_dir()?)?;
    let s0 = match (ic, angle) {
        (Some(s), _) => s,
        (None, Some(a)) => State::on_circle(a * std::f64::consts::PI),
        (None, None) => unreachable!("clap requires --ic or --angle"),
    };
    let (noise, duration) = noise_model(&cfg, noise);
    let env = sys.env();
    let steps = (duration / env.dt()).round() as usize;
    let (rollout, seq) = noise.record(env, &base, s0, steps, 0);
    let (csv, line) = if baseline {
        let end = hysteresis_rl::hybrid::TrajectoryEnd::from(rollout.cause);
        (hysteresis_rl::harness::baseline_csv(env, &rollout), format!("baseline: {end}"))
    } else {
        let traj = solve(&sys, HybridState::new(s0, q0)?, duration, |k| seq[k], cfg.hybrid.zeno_limit)?;
        (traj.to_csv(), format!("hybrid: {} after {} jumps", traj.end, traj.jump_count()))
    };
    match output {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    eprintln!("{line}");
    Ok(())
}

fn cmd_compare(run: &RunArgs, noise: &NoiseArgs) -> Result<()> {
    let dir = run.run_dir()?;
    let (cfg, base, sys) = load_run(&dir)?;
    let (noise, duration) = noise_model(&cfg, noise);
    let stuck = StuckCriterion {
        window: cfg.harness.stuck_window,
        threshold: cfg.harness.stuck_threshold,
    };
    let out = dir.join("compare");
    let mut report = compare(
        &base,
        &sys,
        &comparison_ics(cfg.env),
        &noise,
        duration,
        &stuck,
        cfg.hybrid.zeno_limit,
        Some(&out),
    )?;
    report.config = Some(cfg.clone());
    println!("{}", report.table());
    let cases: Vec<(State, u8)> = overlap_ics(cfg.env)
        .into_iter()
        .flat_map(|s| [(s, 0), (s, 1)])
        .collect();
    for (label, model) in [("noise-free", NoiseModel::none()), ("with noise", noise)] {
        println!("sided consistency ({label}):");
        for c in sided_consistency(&sys, &base, &cases, &model, duration, cfg.hybrid.zeno_limit)? {
            let side = c.side.map_or("none".to_string(), |s| s.to_string());
            println!(
                "  {} q0={} -> side {side} ({} jumps) {}",
                hysteresis_rl::harness::describe_state(cfg.env, &c.ic),
                c.q0,
                c.jumps,
                if c.consistent { "consistent" } else { "INCONSISTENT" }
            );
        }
    }
    let path = out.join("report.json");
    std::fs::write(&path, report.to_json())?;
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_inspect(path: &Path, map: bool) -> Result<()> {
    let (region, label) = Region::load(path)?;
    println!("{label}: {}", region.summary());
    println!("{} cells, {} connected component(s)", region.count(), region.components());
    if map {
        match *region.grid() {
            Grid::Angular { cells } => {
                let line: String = (0..cells)
                    .map(|c| if region.contains_cell(c) { '#' } else { '.' })
                    .collect();
                println!("{line}");
            }
            Grid::Box { nx, ny, .. } => {
                for iy in (0..ny).rev() {
                    let row: String = (0..nx)
                        .map(|ix| if region.contains_cell(region.grid().index(ix, iy)) { '#' } else { '.' })
                        .collect();
                    println!("{row}");
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(run) => stages(&run, 1, 1),
        Command::FindCritical(run) => stages(&run, 2, 3),
        Command::Extend(run) => stages(&run, 4, 5),
        Command::Hybridize(run) => stages(&run, 6, 7),
        Command::RunAll { run, resume_from } => {
            let cfg = run.resolve()?;
            let out = run_pipeline(&cfg, resume_from, print_step)?;
            println!(
                "overlap width {} ({} critical cells); artifacts in {}",
                format_width(cfg.env, out.overlap_width),
                out.critical.critical.count(),
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Simulate {
            run,
            noise,
            ic,
            angle,
            q0,
            baseline,
            output,
        } => cmd_simulate(&run, &noise, ic, angle, q0, baseline, output.as_deref()),
        Command::Compare { run, noise } => cmd_compare(&run, &noise),
        Command::InspectRegion { path, map } => cmd_inspect(&path, map),
        Command::Config { env } => {
            print!("{}", RunConfig::for_env(env).to_toml());
            Ok(())
        }
    }
}

fn is_missing_artifact(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<ConfigError>(), Some(ConfigError::MissingArtifact(_)))
            || matches!(e.downcast_ref::<RegionError>(), Some(RegionError::Io(io)) if io.kind() == std::io::ErrorKind::NotFound)
            || matches!(e.downcast_ref::<std::io::Error>(), Some(io) if io.kind() == std::io::ErrorKind::NotFound)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_missing_artifact(&err) {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
