//! `cogsched` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use cogsched::config::{validate_config, ConfigError, ScenarioConfig};
use cogsched::sim::{
    differences_csv, iota_csv, iota_sweep, overlay_audit, paired_run, run_scenario, seeds, sweep, sweep_csv,
    write_run_artifacts, SimError,
};

#[derive(Parser)]
#[command(name = "cogsched", version, about = "Online scheduler and simulator for cognitive-radio downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write queues.csv, rates.csv and summary.json.
    Run(Common),
    /// Sweep one parameter over a list of values, averaging over seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter name, e.g. `V`, `iota`, `theta_1`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; an empty string gives an empty table.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Evaluate the full-overlay condition on sampled channels.
    OverlayCheck {
        #[command(flatten)]
        common: Common,
        /// Number of channel draws.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
    },
    /// Paired-seed comparison of exact and estimated PU backlog.
    CompareEstimator {
        #[command(flatten)]
        common: Common,
        /// Comma-separated slack values for the long-run sweep.
        #[arg(long, default_value = "0.01,0.1,1")]
        iotas: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Check a scenario file and print errors and warnings.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; the built-in reference scenario when omitted.
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    #[arg(long = "config", conflicts_with = "config_pos")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["coca", "coca-e"])]
    mode: Option<String>,
    /// `key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<SimError>() {
            Some(SimError::InvalidConfig(_) | SimError::Config(_) | SimError::UnknownParam(_)) => 2,
            _ if err.downcast_ref::<ConfigError>().is_some() => 2,
            _ => 1,
        };
        Failure { code, err }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, Failure> {
    match cmd {
        Command::Run(c) => cmd_run(&c),
        Command::Sweep {
            common,
            param,
            values,
            repeats,
        } => cmd_sweep(&common, &param, &values, repeats),
        Command::OverlayCheck { common, draws } => cmd_overlay(&common, draws),
        Command::CompareEstimator { common, iotas, repeats } => cmd_compare(&common, &iotas, repeats),
        Command::Validate(c) => cmd_validate(&c),
    }
}

fn load(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("rng_seed={seed}"));
    }
    if let Some(mode) = &c.mode {
        overrides.push(format!("mode=\"{mode}\""));
    }
    let cfg = match c.config.as_ref().or(c.config_pos.as_ref()) {
        Some(path) => ScenarioConfig::load(path, &overrides)?,
        None => ScenarioConfig::from_toml_with_overrides(&ScenarioConfig::default().to_toml_string(), &overrides)?,
    };
    let report = validate_config(&cfg);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.is_ok() {
        return Err(SimError::InvalidConfig(report).into());
    }
    Ok(cfg)
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<f64>().with_context(|| format!("bad number `{x}`")))
        .collect()
}

fn write(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))
}

fn cmd_run(c: &Common) -> Result<ExitCode, Failure> {
    let cfg = load(c)?;
    let start = Instant::now();
    let run = run_scenario(&cfg)?;
    let summary = write_run_artifacts(&c.out, &cfg, &run)?;
    eprintln!(
        "{} slots in {:.2}s, max Q_o {:.1}, max Q_p {:.1}, {} violations",
        cfg.slot_count,
        start.elapsed().as_secs_f64(),
        summary.max_open_backlog,
        summary.max_private_backlog,
        summary.violations
    );
    println!("{}", serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?);
    Ok(if run.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_sweep(c: &Common, param: &str, values: &str, repeats: usize) -> Result<ExitCode, Failure> {
    let cfg = load(c)?;
    let values = parse_list(values).map_err(|e| Failure { code: 2, err: e })?;
    let rows = sweep(&cfg, param, &values, &seeds(cfg.rng_seed, repeats))?;
    let table = sweep_csv(&rows);
    write(&c.out, "sweep.csv", &table)?;
    print!("{table}");
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    Ok(if violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_overlay(c: &Common, draws: usize) -> Result<ExitCode, Failure> {
    let cfg = load(c)?;
    let audit = overlay_audit(&cfg, draws)?;
    let json = serde_json::to_string_pretty(&audit).map_err(anyhow::Error::from)?;
    write(&c.out, "overlay.json", &json)?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(c: &Common, iotas: &str, repeats: usize) -> Result<ExitCode, Failure> {
    let cfg = load(c)?;
    let iotas = parse_list(iotas).map_err(|e| Failure { code: 2, err: e })?;
    let pair = paired_run(&cfg, cfg.iota)?;
    write(&c.out, "differences.csv", &differences_csv(&pair))?;
    let rows = iota_sweep(&cfg, &iotas, &seeds(cfg.rng_seed, repeats))?;
    let table = iota_csv(&rows);
    write(&c.out, "iota_sweep.csv", &table)?;
    let k = pair.su_diff.len().max(1) as f64;
    eprintln!(
        "iota {}: mean slot difference SU {:.4}, PU {:.4}; idle slots {}, estimate mismatches {}",
        cfg.iota,
        pair.su_diff.iter().sum::<f64>() / k,
        pair.pu_diff.iter().sum::<f64>() / k,
        pair.idle_slots,
        pair.idle_estimate_mismatches
    );
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(c: &Common) -> Result<ExitCode, Failure> {
    let cfg = load(c)?;
    println!("pass ({}, {} SUs, {} subcarriers)", cfg.mode, cfg.num_sus, cfg.num_subcarriers);
    Ok(ExitCode::SUCCESS)
}
