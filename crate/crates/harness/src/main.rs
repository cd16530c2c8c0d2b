//! `mlme-qpt` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlme_harness::config::ChannelSpec;
use mlme_harness::run::{emit_summary, run_experiment, SUMMARY, TRAJECTORIES};
use mlme_harness::validate::run_checks;
use mlme_harness::{ExperimentConfig, HarnessError, Overrides, Result};
use mlme_qpt::channel::channel_entropy;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mlme-qpt", version, about = "Incomplete process tomography with MLME estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of runs override.
    #[arg(long)]
    runs: Option<usize>,
    /// Use exact probabilities instead of sampled counts.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme over all runs and write CSV/JSON results.
    Simulate(Common),
    /// Like `simulate`, recording the ML plateau spread and log-likelihood maximum.
    Plateau {
        #[command(flatten)]
        common: Common,
        /// ML samples per step.
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
    /// Rank, entropy and spectrum of the channel in a config.
    ChannelInfo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks.
    Validate,
    /// Rebuild the summary CSV from stored trajectories.
    EmitData {
        /// Directory holding a trajectory CSV.
        #[arg(long)]
        from: PathBuf,
        /// Destination directory (defaults to `--from`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        runs: common.runs,
        noiseless: common.noiseless,
    });
    Ok(cfg)
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let outcome = run_experiment(cfg)?;
    let dir = cfg.out_dir();
    for p in outcome.write(&dir)? {
        println!("wrote {}", p.display());
    }
    let stalled = outcome.non_converged();
    if !stalled.is_empty() {
        eprintln!("warning: {} estimator(s) did not converge (see manifest)", stalled.len());
    }
    Ok(())
}

#[derive(Deserialize)]
struct ChannelOnly {
    channel: ChannelSpec,
}

fn channel_info(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let spec: ChannelOnly = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let e = spec.channel.build(base, 0)?;
    let report = serde_json::json!({
        "d_in": e.d_in(),
        "d_out": e.d_out(),
        "rank": e.rank()?,
        "entropy": channel_entropy(&e)?,
        "tp_residual": e.tp_residual(),
        "spectrum": e.normalized_spectrum()?,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn validate() -> Result<()> {
    let checks = run_checks()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed > 0 {
        return Err(HarnessError::Validation(failed));
    }
    Ok(())
}

fn emit_data(from: &Path, out: Option<&Path>) -> Result<()> {
    let out = out.unwrap_or(from);
    std::fs::create_dir_all(out)?;
    let src = from.join(TRAJECTORIES);
    let rows = emit_summary(&src, &out.join(SUMMARY))?;
    if out != from {
        std::fs::copy(&src, out.join(TRAJECTORIES))?;
    }
    println!("wrote {} ({} rows)", out.join(SUMMARY).display(), rows.len());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => simulate(&load(&common)?),
        Command::Plateau { common, samples } => {
            let mut cfg = load(&common)?;
            cfg.strategy.record.plateau_samples = samples;
            cfg.strategy.record.loglik_max = true;
            simulate(&cfg)
        }
        Command::ChannelInfo { config } => channel_info(&config),
        Command::Validate => validate(),
        Command::EmitData { from, out } => emit_data(&from, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
