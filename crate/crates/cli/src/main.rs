mod check;
mod config;
mod report;
mod run;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::Config;
use run::Failure;

/// Self-dual variational solvers with certificates.
#[derive(Parser)]
#[command(name = "selfdual", version)]
struct Cli {
    /// Overrides `problem.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; beats `OUT_DIR` and `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a config file.
    Run { config: PathBuf },
    /// Run a self-check suite: algebra, operators, problems or all.
    Check {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Run a config once per value of one key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
    let mut cfg = Config::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.set("problem.seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &Config) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("OUT_DIR").filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.raw("output.dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_outcome(o: &run::Outcome) {
    let s = &o.summary;
    println!(
        "{} / {}: {} certificate {:.3e} (scale {:.3e}), {} iterations, oracle {} {}",
        s.problem,
        s.solver,
        s.status,
        s.certificate,
        s.scale,
        s.iterations,
        s.oracle,
        s.oracle_error.map_or_else(|| "-".to_string(), |e| format!("{e:.3e}")),
    );
    for w in &s.warnings {
        println!("warning: {w}");
    }
    println!("summary: {} ({:.2} s)", o.summary_path.display(), o.wall_seconds);
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let cfg = load(path, cli.seed)?;
    let o = run::run(&cfg, &out_dir(cli, &cfg))?;
    print_outcome(&o);
    Ok(o.exit)
}

fn cmd_sweep(cli: &Cli, path: &Path, param: &str, values: &[String]) -> Result<u8, Failure> {
    let base = load(path, cli.seed)?;
    let dir = out_dir(cli, &base);
    let prefix = base.string("output.prefix", base.raw("problem.name").unwrap_or("run"));
    let mut rows = String::from("value,status,certificate,oracle_error,exit\n");
    let mut worst = 0u8;
    for (i, v) in values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.set(param, v)?;
        cfg.set("output.prefix", &format!("{prefix}_{i}"))?;
        let (status, cert, err, code) = match run::run(&cfg, &dir) {
            Ok(o) => {
                print_outcome(&o);
                let s = o.summary;
                (s.status, s.certificate, s.oracle_error, o.exit)
            }
            Err(f) => {
                eprintln!("{param} = {v}: {f}");
                ("error".to_string(), f64::NAN, None, f.code())
            }
        };
        worst = worst.max(code);
        let _ = writeln!(
            rows,
            "{v},{status},{},{},{code}",
            report::num(cert),
            err.map_or_else(|| "null".to_string(), report::num)
        );
    }
    fs::create_dir_all(&dir).map_err(|e| Failure::Solve(e.to_string()))?;
    let csv = dir.join(format!("{prefix}_sweep.csv"));
    fs::write(&csv, rows).map_err(|e| Failure::Solve(e.to_string()))?;
    println!("sweep: {}", csv.display());
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config),
        Command::Check { suite } => {
            let started = Instant::now();
            match check::run_suite(suite) {
                None => Err(Failure::Config(format!(
                    "unknown suite `{suite}` (expected {})",
                    check::SUITES.join(", ")
                ))),
                Some(checks) => Ok(if check::print_table(&checks, started) { 0 } else { 1 }),
            }
        }
        Command::Sweep { config, param, values } => cmd_sweep(&cli, config, param, values),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
