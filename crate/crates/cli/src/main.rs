use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use dyncop::marketdata::{ExclusionCalendar, SessionWindow, TickFormat};
use dyncop_cli::config::{Resolved, RunConfig};
use dyncop_cli::pipeline::{configured_stages, ingest_ticks, Pipeline, Stage};
use dyncop_cli::provenance::{sha256_hex, OutDir};
use dyncop_cli::{exit_code, synth};

#[derive(Parser)]
#[command(
    name = "dyncop",
    version,
    about = "Dynamic copula risk forecasting for asset pairs"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the daily panel from two tick files.
    Ingest {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tick files of the two assets (instead of a config).
        #[arg(long, num_args = 2, value_names = ["FILE1", "FILE2"])]
        ticks: Option<Vec<PathBuf>>,
        /// Exclusion calendar; the built-in US calendar by default.
        #[arg(long)]
        calendar: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit both marginal models.
    FitMargins(Common),
    /// Fit the configured copula models, with dependence pretests.
    FitCopula(Common),
    /// Goodness-of-fit tests for every fitted copula.
    Gof(Common),
    /// Out-of-sample VaR, ES and CDB forecasts.
    Forecast(Common),
    /// Coverage, DQ, tick-loss and Diebold-Mariano evaluation.
    Backtest(Common),
    /// Conditional diversification benefits with a constant-correlation band.
    Cdb(Common),
    /// Run the configured stages end to end.
    Pipeline(Common),
    /// Write a synthetic daily panel.
    Simulate {
        #[arg(long, default_value_t = 1250)]
        days: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "2010-01-04")]
        start: NaiveDate,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<(Resolved, Option<u64>, PathBuf)> {
    if !c.config.exists() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("config file not found: {}", c.config.display()),
        )
        .into());
    }
    let cfg = RunConfig::load(&c.config)?;
    let seed = c.seed.or(cfg.raw.seed);
    let out = c
        .out_dir
        .clone()
        .or_else(|| cfg.raw.out_dir.clone())
        .unwrap_or_else(|| c.config.parent().unwrap_or(Path::new(".")).join("out"));
    Ok((cfg, seed, out))
}

fn run_stages(c: &Common, stages: Option<&[Stage]>) -> Result<()> {
    let (cfg, seed, out) = load(c)?;
    let stages = match stages {
        Some(s) => s.to_vec(),
        None => configured_stages(&cfg)?,
    };
    let mut p = Pipeline::new(&cfg, seed, out.clone());
    let r = p.run(&stages);
    if let Some(w) = p.warning() {
        eprintln!("warning: {w}");
    }
    r?;
    eprintln!("wrote {} files to {}", p.written().len(), out.display());
    Ok(())
}

fn ingest_without_config(ticks: &[PathBuf], calendar: Option<&Path>, out_dir: &Path) -> Result<()> {
    let calendar = match calendar {
        Some(p) => ExclusionCalendar::load(p)
            .with_context(|| format!("cannot load calendar {}", p.display()))?,
        None => ExclusionCalendar::us_default(),
    };
    let data = ingest_ticks(
        [ticks[0].as_path(), ticks[1].as_path()],
        &TickFormat::default(),
        &SessionWindow::default(),
        &calendar,
    )?;
    let mut hash_input = Vec::new();
    for t in ticks {
        hash_input.extend(std::fs::read(t)?);
    }
    let mut out = OutDir::create(out_dir, sha256_hex(&hash_input), None)?;
    let mut body = Vec::new();
    data.panel.write_csv(&mut body)?;
    out.csv("panel.csv", None, &body)?;
    if let Some(r) = &data.report {
        out.json("ingest_report.json", None, r)?;
    }
    if let Some(w) = &data.warning {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} days written to {}",
        data.panel.len(),
        out_dir.join("panel.csv").display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Ingest {
            config: Some(config),
            out_dir,
            ..
        } => run_stages(
            &Common {
                config,
                seed: None,
                out_dir,
            },
            Some(&[Stage::Ingest]),
        ),
        Command::Ingest {
            config: None,
            ticks: Some(ticks),
            calendar,
            out_dir,
        } => ingest_without_config(
            &ticks,
            calendar.as_deref(),
            &out_dir.unwrap_or_else(|| PathBuf::from("out")),
        ),
        Command::Ingest { .. } => anyhow::bail!(dyncop_cli::pipeline::ValidationError(
            "ingest needs --config or --ticks".into()
        )),
        Command::FitMargins(c) => run_stages(&c, Some(&[Stage::Margins])),
        Command::FitCopula(c) => run_stages(&c, Some(&[Stage::Copula, Stage::Tests])),
        Command::Gof(c) => run_stages(&c, Some(&[Stage::Gof])),
        Command::Forecast(c) => run_stages(&c, Some(&[Stage::Forecast])),
        Command::Backtest(c) => run_stages(&c, Some(&[Stage::Backtest])),
        Command::Cdb(c) => run_stages(&c, Some(&[Stage::Cdb])),
        Command::Pipeline(c) => run_stages(&c, None),
        Command::Simulate {
            days,
            seed,
            start,
            out,
        } => {
            let panel = synth::simulate_panel(&synth::Generator::default(), days, start, seed)?;
            let f = std::fs::File::create(&out)
                .with_context(|| format!("cannot create {}", out.display()))?;
            panel.write_csv(f)?;
            eprintln!("{days} days written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
