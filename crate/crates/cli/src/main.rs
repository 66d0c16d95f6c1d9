//! `sbdc`: validate, run, compare and sweep constellation scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use thiserror::Error;

use sbdc_core::contact_graph::parse_contact_plan;
use sbdc_core::engine::{compare, execute_sweep, plan_sweep, run, RunOptions};
use sbdc_core::error::SimError;
use sbdc_core::scenario::{scenario_hash, LocatedError, Mode, Scenario};

#[derive(Parser)]
#[command(name = "sbdc", version, about = "Multi-orbit space data center simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every violation.
    Validate { path: PathBuf },
    /// Simulate one scenario and write its ledgers.
    Run {
        path: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Contact plan to use instead of the scenario geometry.
        #[arg(long)]
        contacts_file: Option<PathBuf>,
    },
    /// Run the scenario once per mode on identical geometry.
    Compare {
        path: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "relay_only,in_orbit_compute")]
        modes: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run every combination of the swept values for each seed.
    Sweep {
        path: PathBuf,
        /// `key=a,b,c`; repeat for more axes.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Number of consecutive seeds starting at the scenario seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario")]
    Invalid(Vec<LocatedError>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Sim(SimError::InvariantViolation { .. } | SimError::LostTask(_)) => 3,
            CliError::Write { .. } => 1,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    let fail = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(fail)?;
    }
    fs::write(path, body).map_err(fail)
}

fn load(path: &Path) -> Result<(String, Scenario), CliError> {
    let text = read(path)?;
    let scenario = Scenario::from_toml(&text).map_err(CliError::Invalid)?;
    Ok((text, scenario))
}

fn validate(path: &Path) -> Result<(), CliError> {
    let (_, s) = load(path)?;
    println!("{}: valid ({} nodes)", path.display(), s.node_setups().len());
    Ok(())
}

fn run_one(path: &Path, seed: Option<u64>, out: &Path, contacts: Option<&Path>) -> Result<(), CliError> {
    let (text, s) = load(path)?;
    let contact_plan = match contacts {
        Some(p) => Some(parse_contact_plan(&read(p)?).map_err(SimError::from)?),
        None => None,
    };
    let opts = RunOptions {
        seed,
        contact_plan,
        scenario_hash: Some(scenario_hash(&text)),
    };
    info!("running {} for {} s", s.name, s.horizon_s);
    let ledger = run(&s, &opts)?;
    ledger.write_dir(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    let m = &ledger.summary.metrics;
    println!(
        "{}: {} tasks, {} completed, {} missed, p95 {:.3} s -> {}",
        s.name,
        m.tasks_generated,
        m.completed,
        m.missed,
        m.p95_latency_s,
        out.display()
    );
    Ok(())
}

fn compare_modes(path: &Path, modes: &[String], seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let (text, s) = load(path)?;
    let modes = modes
        .iter()
        .map(|m| m.parse::<Mode>().map_err(CliError::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = RunOptions {
        seed,
        scenario_hash: Some(scenario_hash(&text)),
        ..RunOptions::default()
    };
    let report = compare(&s, &modes, &opts)?;
    write(&out.join("comparison.json"), &report.to_json())?;
    let csv = report.to_csv();
    write(&out.join("comparison.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn parse_axis(raw: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--param expects key=a,b,c, got {raw:?}")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if key.trim().is_empty() || values.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("--param expects key=a,b,c, got {raw:?}")));
    }
    Ok((key.trim().to_string(), values))
}

fn sweep(path: &Path, params: &[String], seeds: u64, out: &Path, jobs: Option<usize>) -> Result<(), CliError> {
    let (text, s) = load(path)?;
    let grid = params.iter().map(|p| parse_axis(p)).collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = (0..seeds).map(|k| s.seed.wrapping_add(k)).collect();
    let planned = plan_sweep(&text, &grid, &seeds).map_err(CliError::Invalid)?;
    info!("sweeping {} runs", planned.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let failed = std::sync::Mutex::new(None);
    let results = pool.install(|| {
        execute_sweep(&planned, |key, ledger| {
            let dir = out.join(format!("point-{}-seed-{}", key.point, key.seed));
            if let Err(source) = ledger.write_dir(&dir) {
                failed
                    .lock()
                    .expect("poisoned")
                    .get_or_insert(CliError::Write { path: dir, source });
            }
        })
    });
    if let Some(e) = failed.into_inner().expect("poisoned") {
        return Err(e);
    }
    let csv = results.aggregate_csv();
    write(&out.join("aggregate.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { path } => validate(path),
        Command::Run {
            path,
            seed,
            out_dir,
            contacts_file,
        } => run_one(path, *seed, out_dir, contacts_file.as_deref()),
        Command::Compare {
            path,
            modes,
            seed,
            out_dir,
        } => compare_modes(path, modes, *seed, out_dir),
        Command::Sweep {
            path,
            params,
            seeds,
            out_dir,
            jobs,
        } => sweep(path, params, *seeds, out_dir, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Invalid(errors) => {
                    for err in errors {
                        eprintln!("error: {err}");
                    }
                    eprintln!("{} violation(s)", errors.len());
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
