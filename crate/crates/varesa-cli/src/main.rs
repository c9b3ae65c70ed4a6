//! `varesa` — config-driven front end for the VaR/ES estimation schemes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use varesa_cli::commands::{
    cmd_analytic, cmd_clt_study, cmd_complexity, cmd_estimate, write_complexity, write_study,
    CliError,
};
use varesa_cli::config::{ConfigError, RunConfig, Scheme};

#[derive(Parser)]
#[command(
    name = "varesa",
    version,
    about = "Stochastic-approximation VaR/ES estimators: exact, nested, averaged, multilevel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print closed-form VaR/ES benchmarks and covariance ingredients.
    Analytic(CommonArgs),
    /// Run the configured scheme once and print the estimate.
    Estimate(CommonArgs),
    /// Replicate the scheme, renormalize errors, fit the limit law.
    CltStudy(CommonArgs),
    /// Evaluate deterministic cost models across target accuracies.
    Complexity(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (`paper-swap`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Scheme the preset should run (default: mlsa).
    #[arg(long, value_enum, requires = "preset")]
    scheme: Option<Scheme>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread override (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Replication-count override.
    #[arg(long)]
    replications: Option<u64>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => {
                if name != varesa_cli::config::PRESET_SWAP {
                    return Err(ConfigError::UnknownPreset(name.clone()).into());
                }
                RunConfig::preset(self.scheme.unwrap_or(Scheme::Mlsa))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "provide --config <PATH> or --preset paper-swap".into(),
                )
                .into())
            }
            (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(replications) = self.replications {
            cfg.replications = replications;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analytic(args) => {
            let cfg = args.load()?;
            let report = cmd_analytic(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(
                    dir.join("analytic.json"),
                    serde_json::to_string_pretty(&report)? + "\n",
                )?;
            }
        }
        Command::Estimate(args) => {
            let cfg = args.load()?;
            let report = cmd_estimate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(
                    dir.join("estimate.json"),
                    serde_json::to_string_pretty(&report)? + "\n",
                )?;
            }
        }
        Command::CltStudy(args) => {
            let cfg = args.load()?;
            let dir = cfg.out.clone().ok_or_else(|| {
                ConfigError::Invalid("clt-study requires an output directory (--out)".into())
            })?;
            let (summary, reps) = cmd_clt_study(&cfg)?;
            write_study(&dir, &cfg, &summary, &reps)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Complexity(args) => {
            let cfg = args.load()?;
            let report = cmd_complexity(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(dir) = &cfg.out {
                write_complexity(dir, &report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
