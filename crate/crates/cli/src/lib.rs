//! The `dflsim` command line.
//!
//! ```text
//! dflsim run <config>        run an experiment and write <outdir>/<name>/
//! dflsim sweep <config>      run a grid of experiments plus sweep.csv
//! dflsim bounds <config>     quadratic-testbed trajectory vs. the bound (CSV)
//! dflsim validate <config>   schema and value checks only
//! dflsim report <run-dir>    recompute the summary from metrics.csv
//! ```
//!
//! Exit status: 0 on success, 1 for usage or config errors, 2 for runtime
//! failures.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dflsim::analysis::{bound_trajectory, write_bound_csv, BoundsConfig};
use dflsim::sim::{report, run_experiment, write_run, RunConfig, RunOptions, SweepConfig, SweepRow};
use dflsim::Error;
use log::info;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable consulted when neither `--outdir` nor the config
/// names an output directory.
pub const OUTDIR_ENV: &str = "DFLSIM_OUTDIR";

#[derive(Debug, Parser)]
#[command(name = "dflsim", version, about = "Decentralized federated learning simulator")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed_override: Option<u64>,
    /// Replace the config's round count.
    #[arg(long, global = true, value_name = "T")]
    rounds: Option<usize>,
    /// Output directory (default: config `output_dir`, then $DFLSIM_OUTDIR, then ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    outdir: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    parallel: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run every combination listed in a sweep file.
    Sweep { config: PathBuf },
    /// Write the bound-vs-trajectory CSV (to stdout without an output directory).
    Bounds { config: PathBuf },
    /// Check a run, sweep or bounds config without running it.
    Validate { config: PathBuf },
    /// Re-derive the summary numbers of a run directory from metrics.csv.
    Report { run_dir: PathBuf },
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.quiet);
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: &Cli) -> dflsim::Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let config = load_run(cli, config)?;
            let outdir = output_root(cli, &config);
            execute(cli, &config, &outdir).map(|_| ())
        }
        Command::Sweep { config } => sweep(cli, config),
        Command::Bounds { config } => bounds(cli, config),
        Command::Validate { config } => validate(config),
        Command::Report { run_dir } => print_report(cli, run_dir),
    }
}

fn load_run(cli: &Cli, path: &Path) -> dflsim::Result<RunConfig> {
    let mut config = RunConfig::from_path(path)?;
    apply_overrides(cli, &mut config)?;
    Ok(config)
}

fn apply_overrides(cli: &Cli, config: &mut RunConfig) -> dflsim::Result<()> {
    if let Some(seed) = cli.seed_override {
        config.seeds = vec![seed];
    }
    if let Some(t) = cli.rounds {
        config.rounds = t;
    }
    config.validate()
}

fn output_root(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.outdir
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn execute(cli: &Cli, config: &RunConfig, outdir: &Path) -> dflsim::Result<SweepRow> {
    let summary = run_experiment(config, RunOptions { parallel: cli.parallel })?;
    let dir = outdir.join(&config.name);
    write_run(&dir, &summary)?;
    info!("wrote {}", dir.display());
    if !cli.quiet {
        println!(
            "{}: mean acc {:.3}%  var {:.3}  ({:.1}s)",
            config.name,
            summary.mean_acc_points(),
            summary.numbers.acc_var,
            summary.wall_clock_secs
        );
    }
    Ok(SweepRow::new(config, summary.numbers.mean_acc, summary.numbers.acc_var))
}

fn sweep(cli: &Cli, path: &Path) -> dflsim::Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut sweep = SweepConfig::from_json(&text)?;
    if let Some(base) = path.parent() {
        sweep.base.resolve_paths(base);
    }
    apply_overrides(cli, &mut sweep.base)?;
    let runs = sweep.expand()?;
    let outdir = output_root(cli, &sweep.base);
    let rows = runs
        .iter()
        .map(|c| execute(cli, c, &outdir))
        .collect::<dflsim::Result<Vec<_>>>()?;
    fs::create_dir_all(&outdir)?;
    let file = outdir.join(format!("{}-sweep.csv", sweep.base.name));
    let mut w = csv::Writer::from_path(&file)?;
    w.write_record(["name", "temperature", "attack", "mean_acc", "acc_var"])?;
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.temperature.map(|t| t.to_string()).unwrap_or_default(),
            r.attack.clone(),
            r.mean_acc.to_string(),
            r.acc_var.to_string(),
        ])?;
    }
    w.flush()?;
    info!("wrote {}", file.display());
    Ok(())
}

fn load_bounds(path: &Path) -> dflsim::Result<BoundsConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn bounds(cli: &Cli, path: &Path) -> dflsim::Result<()> {
    let mut config = load_bounds(path)?;
    if let Some(seed) = cli.seed_override {
        config.seed = seed;
    }
    if let Some(t) = cli.rounds {
        config.rounds = t;
    }
    let rows = bound_trajectory(&config)?;
    let outdir = cli.outdir.clone().or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from));
    match outdir {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            let file = dir.join("bounds.csv");
            write_bound_csv(&rows, fs::File::create(&file)?)?;
            info!("wrote {}", file.display());
        }
        None => write_bound_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn validate(path: &Path) -> dflsim::Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let kind = if doc.get("base").is_some() {
        SweepConfig::from_json(&text).map(|_| "sweep")
    } else {
        match RunConfig::from_json(&text) {
            Ok(_) => Ok("run"),
            Err(run_err) => match serde_json::from_str::<BoundsConfig>(&text) {
                Ok(_) => Ok("bounds"),
                Err(_) => Err(run_err),
            },
        }
    };
    let kind = kind.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    println!("{}: valid {kind} config", path.display());
    Ok(())
}

fn print_report(cli: &Cli, dir: &Path) -> dflsim::Result<()> {
    let r = report(dir)?;
    let mut out = io::stdout().lock();
    if !cli.quiet {
        for s in &r.derived.per_seed {
            writeln!(
                out,
                "seed {:>6}  round {:>5}  mean acc {:>8.3}%  var {:>9.3}",
                s.seed,
                s.round,
                s.mean_acc * 100.0,
                s.acc_var
            )?;
        }
    }
    writeln!(
        out,
        "{}: mean acc {:.3}%  var {:.3}  ({} seeds)",
        r.config.name,
        r.derived.mean_acc * 100.0,
        r.derived.acc_var,
        r.derived.per_seed.len()
    )?;
    serde_json::to_writer_pretty(&mut out, &r.derived)?;
    writeln!(out)?;
    if !r.matches() {
        return Err(Error::Argument(format!(
            "{}: metrics.csv does not reproduce summary.json",
            dir.display()
        )));
    }
    Ok(())
}
