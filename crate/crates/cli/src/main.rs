use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use seal::cartpole::CartPole;
use seal::model::{load_model, save_model, ModelMeta};
use seal::trainer::{evaluate, train_cartpole, Phase};
use seal::watermark::{build_env, default_cartpole_spec, validate, WatermarkSpec};
use seal::{cartpole, verify, RunConfig, Verdict, VerifierConfig};

/// Embed and verify behavioral watermarks in deep Q-network policies.
#[derive(Debug, Parser)]
#[command(name = "seal", version)]
struct Cli {
    /// Seed for every random source; falls back to SEAL_SEED.
    #[arg(long, global = true, env = "SEAL_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a cart-pole policy, jointly with a watermark unless --no-watermark.
    Train(TrainArgs),
    /// Score a policy in the watermark environment and issue a verdict.
    ///
    /// Exits 0 on match, 2 on no-match and 3 on suspect.
    Verify(VerifyArgs),
    /// Report the mean greedy return of a policy over fresh episodes.
    Eval(EvalArgs),
    /// Watermark spec utilities.
    #[command(subcommand)]
    Spec(SpecCommand),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (JSON); omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Watermark spec (JSON); defaults to the built-in cart-pole spec.
    #[arg(long, conflicts_with = "no_watermark")]
    spec: Option<PathBuf>,
    /// Train a nominal policy on the main task only.
    #[arg(long)]
    no_watermark: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-episode training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Mean reward needed for a match; defaults to 90% of the perfect return.
    #[arg(long)]
    match_threshold: Option<f64>,
    /// Mean reward at or below which the policy is unrelated; defaults to 10%.
    #[arg(long)]
    reject_threshold: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EnvKind {
    Cartpole,
    Watermark,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    env: EnvKind,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Watermark spec for --env watermark; defaults to the built-in spec.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SpecCommand {
    /// Check a spec against the cart-pole environment.
    Validate { file: PathBuf },
    /// Write the built-in cart-pole watermark spec.
    NewDefault {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_spec(path: Option<&Path>) -> Result<WatermarkSpec> {
    match path {
        Some(p) => WatermarkSpec::load(p).with_context(|| format!("loading spec {}", p.display())),
        None => Ok(default_cartpole_spec()),
    }
}

fn train(args: &TrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let spec = if args.no_watermark {
        None
    } else {
        Some(load_spec(args.spec.as_deref())?)
    };
    // Effective configuration, defaults resolved.
    print!("{}", config.to_json());

    info!(
        "training for {} steps ({})",
        config.hyperparams.total_timesteps,
        if spec.is_some() { "watermarked" } else { "nominal" }
    );
    let outcome = train_cartpole(&config, spec.as_ref()).map_err(|failure| {
        if let Some(path) = &args.log {
            if let Err(e) = failure.log.save_csv(path) {
                log::error!("could not write partial log: {e}");
            }
        }
        anyhow::Error::new(failure)
    })?;

    let meta = ModelMeta {
        training: Some(config),
        watermark: spec.as_ref().map(WatermarkSpec::fingerprint).transpose()?,
    };
    save_model(&outcome.network, &meta, &args.out)?;
    if let Some(path) = &args.log {
        outcome.log.save_csv(path)?;
    }
    let main = outcome.log.recent_mean(Phase::Main, 50);
    let mark = outcome.log.recent_mean(Phase::Watermark, 20);
    info!(
        "done: {} episodes, last-50 main mean {:?}, last-20 watermark mean {:?}",
        outcome.log.records.len(),
        main,
        mark
    );
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(args: &VerifyArgs) -> Result<ExitCode> {
    let (net, _) = load_model(&args.model)?;
    let spec = load_spec(args.spec.as_deref())?;
    let defaults = VerifierConfig::for_spec(&spec);
    let config = VerifierConfig {
        episodes: args.episodes,
        match_threshold: args.match_threshold.unwrap_or(defaults.match_threshold),
        reject_threshold: args.reject_threshold.unwrap_or(defaults.reject_threshold),
    };
    let report = verify(&net, &spec, &config)?;
    if let Some(path) = &args.report {
        report.save(path)?;
    }
    println!(
        "verdict {} (mean {} over {} episodes, {} perfect, trajectory match {:.3})",
        report.verdict,
        report.mean_reward,
        report.episodes_run,
        report.perfect_episodes,
        report.trajectory_match_fraction
    );
    Ok(match report.verdict {
        Verdict::Match => ExitCode::SUCCESS,
        Verdict::NoMatch => ExitCode::from(2),
        Verdict::Suspect => ExitCode::from(3),
    })
}

fn eval_cmd(args: &EvalArgs, seed: Option<u64>) -> Result<ExitCode> {
    let (net, _) = load_model(&args.model)?;
    let result = match args.env {
        EnvKind::Cartpole => {
            let mut env = CartPole::new(seed.unwrap_or(0));
            evaluate(&net, &mut env, args.episodes)?
        }
        EnvKind::Watermark => {
            let spec = load_spec(args.spec.as_deref())?;
            let mut env = build_env(&spec, net.action_count())?;
            evaluate(&net, &mut env, args.episodes)?
        }
    };
    println!("mean {} over {} episodes", result.mean, args.episodes);
    Ok(ExitCode::SUCCESS)
}

fn spec_cmd(cmd: &SpecCommand) -> Result<ExitCode> {
    match cmd {
        SpecCommand::Validate { file } => {
            let spec = load_spec(Some(file))?;
            let report = validate(&spec, &cartpole::cartpole_meta());
            for check in &report.checks {
                let status = if check.passed() { "ok" } else { "FAILED" };
                println!("condition {} ({}): {status}", check.condition.number(), check.condition);
                for v in &check.violations {
                    println!("  - {v}");
                }
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        SpecCommand::NewDefault { out } => {
            default_cartpole_spec().save(out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Train(args) => train(args, cli.seed),
        Command::Verify(args) => verify_cmd(args),
        Command::Eval(args) => eval_cmd(args, cli.seed),
        Command::Spec(cmd) => spec_cmd(cmd),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn no_watermark_conflicts_with_spec() {
        let parsed = Cli::try_parse_from(["seal", "train", "--no-watermark", "--spec", "x", "--out", "m"]);
        assert!(parsed.is_err());
    }

    #[test]
    fn bad_seed_is_usage_error() {
        assert!(Cli::try_parse_from(["seal", "--seed", "abc", "spec", "validate", "x"]).is_err());
    }
}
