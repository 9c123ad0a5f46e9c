use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shieldnav::checks::{run_suite, Suite};
use shieldnav::config::Config;
use shieldnav::eval::{evaluate, group_seeds, run_trial, trial_scenario_seed, PolicyPilot, TrajRow};
use shieldnav::policy::checkpoint;
use shieldnav::trainer::{final_checkpoint, log_to_csv, Trainer};
use shieldnav::world::{generate_scenario_with, Difficulty};
use shieldnav::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "shieldnav", version, about = "Shielded LiDAR navigation: training, evaluation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write logs and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint over randomized trials.
    Eval(EvalArgs),
    /// Run a verification suite and print a JSON report.
    Check {
        /// shield, gradients, acsi, rewards or lse
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record one evaluation episode as CSV.
    DumpTraj(DumpArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config; SHIELDNAV__SECTION__KEY variables override any key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    difficulty: Option<Difficulty>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// no-acsi, no-shield or no-reg; may be repeated.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trial index within the first seed group.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::ConfigHashMismatch { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

/// Any failure to read or parse the config is a config error.
fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p),
        None => Config::from_json_with_overrides("", std::env::vars()),
    }
    .map_err(|e| Failure::Config(e.to_string()))
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        config.seed = s;
    }
    if let Some(d) = args.common.difficulty {
        config.world.difficulty = d;
    }
    if let Some(n) = args.iterations {
        config.ppo.iterations = n;
    }
    for a in &args.ablate {
        config.ablation.apply_flag(a)?;
    }
    config.validate()?;
    let mut trainer = Trainer::new(config)?;
    let log = trainer.train(Some(&args.out), |row| {
        eprintln!(
            "iter {:>4}  steps {:>8}  reward {:>8.3}  sr {:>5.2}  alpha {:.3}  active {:.3}  p_reset {:.3}",
            row.iteration, row.env_steps, row.r_total, row.sr_estimate, row.mean_alpha, row.shield_active_fraction, row.mean_p_reset
        )
    })?;
    let summary = serde_json::json!({
        "checkpoint": final_checkpoint(&args.out),
        "config_hash": trainer.config.hash(),
        "iterations": log.len(),
        "env_steps": trainer.env_steps,
        "final": log.last(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("JSON"));
    Ok(())
}

/// Config for a checkpoint: the explicit file, else the `config.json` saved
/// next to it, else defaults. The hash must match the sidecar.
fn checkpoint_config(common: &CommonArgs, ckpt: &Path, meta_hash: &str) -> Result<Config, Failure> {
    let beside = ckpt.parent().map(|d| d.join("config.json")).filter(|p| p.exists());
    let config = load_config(common.config.as_deref().or(beside.as_deref()))?;
    let hash = config.hash();
    if hash != meta_hash {
        return Err(Error::ConfigHashMismatch {
            checkpoint: meta_hash.to_string(),
            config: hash,
        }
        .into());
    }
    Ok(config)
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let (net, params, meta) = checkpoint::load(&args.checkpoint)?;
    let config = checkpoint_config(&args.common, &args.checkpoint, &meta.config_hash)?;
    let difficulty = args.common.difficulty.unwrap_or(config.world.difficulty);
    let trials = args.trials.unwrap_or(config.eval.trials);
    let groups = args.groups.unwrap_or(config.eval.seed_groups);
    let seed = args.common.seed.unwrap_or(config.seed);
    let pilot = PolicyPilot { net: &net, params: &params };
    let mut report = evaluate(&pilot, &config, difficulty, trials, seed, groups)?;
    report.config_hash = Some(meta.config_hash);
    let text = report.to_json();
    if let Some(out) = &args.out {
        std::fs::write(out, &text).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    }
    println!("{text}");
    Ok(())
}

fn dump(args: DumpArgs) -> Result<(), Failure> {
    let (net, params, meta) = checkpoint::load(&args.checkpoint)?;
    let config = checkpoint_config(&args.common, &args.checkpoint, &meta.config_hash)?;
    let difficulty = args.common.difficulty.unwrap_or(config.world.difficulty);
    let seed = group_seeds(args.common.seed.unwrap_or(config.seed), 1)[0];
    let scenario = generate_scenario_with(&config.world.scenario, difficulty, trial_scenario_seed(seed, args.trial))?;
    let pilot = PolicyPilot { net: &net, params: &params };
    let mut rows: Vec<TrajRow> = Vec::new();
    let (outcome, _, _) = run_trial(
        &pilot,
        &config,
        &scenario,
        shieldnav::trainer::derive_seed(seed, args.trial as u64),
        Some(&mut rows),
    )?;
    let csv = log_to_csv(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?,
        None => print!("{csv}"),
    }
    eprintln!("{}", serde_json::json!({ "outcome": outcome, "ticks": rows.len() }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::DumpTraj(a) => dump(a),
        Command::Check { suite, seed } => {
            let report = run_suite(suite, seed);
            println!("{}", report.to_json());
            if report.passed {
                Ok(())
            } else {
                return ExitCode::from(EXIT_FAILURE);
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
