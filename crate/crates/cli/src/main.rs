//! `tvpvecm`: estimation, backtesting, synthetic data, reports and manifest checks.
//!
//! Exit codes: 0 success, 1 other failures, 2 invalid configuration or data,
//! 3 numerical failure, 4 backtest grid completed only partially.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use commands::{Outcome, Staging};
use config::RunConfig;
use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "tvpvecm", version, about = "Sparsified TVP-VECM estimation and forecast evaluation")]
struct Cli {
    /// Worker threads (0 = one per core). Use 1 for bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output directory (default: <output-root>/<command>-<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, env = "TVPVECM_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    /// Replace an existing output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sampler and write the draw archive plus summaries.
    Estimate {
        #[arg(short, long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        lags: Option<usize>,
    },
    /// Rolling one-step-ahead evaluation of a model grid.
    Backtest {
        #[arg(short, long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Generate a synthetic cointegrated panel and its ground truth.
    Synth {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Rewrite the summary tables of a saved archive.
    Report {
        #[arg(long)]
        archive: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Re-hash the inputs and outputs of a run against its manifest.
    Verify { dir: PathBuf },
}

fn output_dir(output: &OutputArgs, cfg: Option<&RunConfig>, command: &str, tag: &str) -> PathBuf {
    output
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| output.output_root.join(format!("{command}-{tag}")))
}

fn short_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..12].to_string()
}

struct Run<'a> {
    command: &'a str,
    config_path: Option<&'a Path>,
    data_path: Option<PathBuf>,
    seed: Option<u64>,
    threads: usize,
}

/// Stage, run, hash and publish one command.
fn publish(
    run: Run,
    cfg: Option<&RunConfig>,
    target: &Path,
    overwrite: bool,
    body: impl FnOnce(&Path) -> Result<Outcome>,
) -> Result<Outcome> {
    let started = manifest::now();
    let staging = Staging::begin(target, overwrite)?;
    let outcome = body(staging.path())?;
    if let Some(cfg) = cfg {
        std::fs::write(staging.path().join("config.toml"), cfg.to_toml()?)?;
    }
    let m = RunManifest {
        command: run.command.to_string(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: run.config_path.map(manifest::input).transpose()?,
        data: run.data_path.as_deref().map(manifest::input).transpose()?,
        seed: run.seed,
        threads: run.threads,
        started,
        finished: manifest::now(),
        outputs: manifest::hash_outputs(staging.path())?,
    };
    m.write(staging.path())?;
    let dir = staging.commit()?;
    println!("{}", dir.display());
    Ok(outcome)
}

fn execute(cli: Cli) -> Result<Outcome> {
    let threads = cli.threads;
    match cli.command {
        Command::Estimate {
            config,
            output,
            seed,
            draws,
            burnin,
            thin,
            lags,
        } => {
            let mut cfg = RunConfig::read(&config)?;
            let m = &mut cfg.model;
            m.seed = seed.unwrap_or(m.seed);
            m.draws = draws.unwrap_or(m.draws);
            m.burnin = burnin.unwrap_or(m.burnin);
            m.thin = thin.unwrap_or(m.thin);
            m.lags = lags.unwrap_or(m.lags);
            let target = output_dir(&output, Some(&cfg), "estimate", &short_hash(&cfg.to_toml()?));
            let run = Run {
                command: "estimate",
                config_path: Some(&config),
                data_path: cfg.data.as_ref().map(|d| d.path.clone()),
                seed: Some(cfg.model.seed),
                threads,
            };
            publish(run, Some(&cfg), &target, output.overwrite, |dir| {
                commands::estimate(&cfg, dir)
            })
        }
        Command::Backtest {
            config,
            output,
            seed,
            window,
            holdout,
            stride,
            alpha,
        } => {
            let mut cfg = RunConfig::read(&config)?;
            let b = &mut cfg.backtest;
            b.seed = seed.unwrap_or(b.seed);
            b.window = window.unwrap_or(b.window);
            b.holdout = holdout.unwrap_or(b.holdout);
            b.stride = stride.unwrap_or(b.stride);
            b.mcs.alpha = alpha.unwrap_or(b.mcs.alpha);
            let target = output_dir(&output, Some(&cfg), "backtest", &short_hash(&cfg.to_toml()?));
            let run = Run {
                command: "backtest",
                config_path: Some(&config),
                data_path: cfg.data.as_ref().map(|d| d.path.clone()),
                seed: Some(cfg.backtest.seed),
                threads,
            };
            publish(run, Some(&cfg), &target, output.overwrite, |dir| {
                commands::run_backtest(&cfg, dir)
            })
        }
        Command::Synth {
            config,
            output,
            seed,
            m,
            t,
            rank,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::read(p)?,
                None => RunConfig::default(),
            };
            let s = &mut cfg.synth;
            s.seed = seed.unwrap_or(s.seed);
            s.m = m.unwrap_or(s.m);
            s.t = t.unwrap_or(s.t);
            s.rank = rank.unwrap_or(s.rank);
            let target = output_dir(&output, Some(&cfg), "synth", &short_hash(&cfg.to_toml()?));
            let run = Run {
                command: "synth",
                config_path: config.as_deref(),
                data_path: None,
                seed: Some(cfg.synth.seed),
                threads,
            };
            publish(run, Some(&cfg), &target, output.overwrite, |dir| commands::synth(&cfg, dir))
        }
        Command::Report { archive, output } => {
            let tag = short_hash(&archive.to_string_lossy());
            let target = output_dir(&output, None, "report", &tag);
            let run = Run {
                command: "report",
                config_path: None,
                data_path: None,
                seed: None,
                threads,
            };
            publish(run, None, &target, output.overwrite, |dir| {
                commands::report_archive(&archive, dir)
            })
        }
        Command::Verify { dir } => {
            let problems = manifest::verify(&dir)?;
            if problems.is_empty() {
                println!("ok: {}", dir.display());
                Ok(Outcome::Complete)
            } else {
                for p in &problems {
                    eprintln!("mismatch: {p}");
                }
                anyhow::bail!("{} mismatches against the manifest", problems.len())
            }
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tvpvecm::Error>() {
            return match e {
                tvpvecm::Error::Numerical { .. } => 3,
                tvpvecm::Error::Io(_) | tvpvecm::Error::Json(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
