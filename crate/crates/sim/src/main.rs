//! Command-line front end for the OTFS-NOMA link simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_noma_sim::{
    approx_error_experiment, quick_validation, records_to_csv, run_sweep, write_csv, Scheme,
    SimConfig,
};

#[derive(Parser)]
#[command(name = "otfs-noma-sim", about = "Link-level OTFS-NOMA SER simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file (key = value; see README for the key list).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (CSV for `run`, two-column text for `approx-error`);
    /// stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for trial-level parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Restrict to these schemes (repeatable).
    #[arg(long = "scheme")]
    schemes: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SER sweep and emit one CSV row per (point, scheme, user).
    Run(CommonOpts),
    /// Measure the normalized approximation error of the low-complexity MSE
    /// against the exact per-symbol MSE (small grids only).
    ApproxError(CommonOpts),
    /// Run fast numerical self-checks and report pass/fail per check.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the resolved configuration.
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(opts: &CommonOpts) -> otfs_noma::Result<SimConfig> {
    let mut cfg = match &opts.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if !opts.schemes.is_empty() {
        cfg.schemes = opts
            .schemes
            .iter()
            .map(|s| Scheme::parse(s))
            .collect::<otfs_noma::Result<Vec<_>>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn install_threads(threads: Option<usize>) -> Result<(), String> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    Ok(())
}

fn emit(text: String, out: &Option<PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Exit codes: 0 success, 1 configuration error, 2 runtime/numerical error.
fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(opts) => {
            let cfg = match load_config(&opts) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = install_threads(opts.threads) {
                eprintln!("configuration error: {e}");
                return ExitCode::from(1);
            }
            match run_sweep(&cfg) {
                Ok(records) => match &opts.out {
                    Some(path) => {
                        if let Err(e) = write_csv(&records, path) {
                            eprintln!("runtime error: {e}");
                            return ExitCode::from(2);
                        }
                        eprintln!("wrote {} records to {}", records.len(), path.display());
                        ExitCode::SUCCESS
                    }
                    None => {
                        print!("{}", records_to_csv(&records));
                        ExitCode::SUCCESS
                    }
                },
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::ApproxError(opts) => {
            let cfg = match load_config(&opts) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("configuration error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = install_threads(opts.threads) {
                eprintln!("configuration error: {e}");
                return ExitCode::from(1);
            }
            match approx_error_experiment(&cfg) {
                Ok(points) => {
                    let mut text = String::from("v_max_hz,e_gamma\n");
                    for (v, e) in points {
                        text.push_str(&format!("{v},{e:.6e}\n"));
                    }
                    if let Err(e) = emit(text, &opts.out) {
                        eprintln!("runtime error: {e}");
                        return ExitCode::from(2);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("runtime error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Validate { seed } => {
            let failures = quick_validation(seed);
            if failures.is_empty() {
                println!("all checks passed");
                ExitCode::SUCCESS
            } else {
                eprintln!("{} check(s) failed: {}", failures.len(), failures.join(", "));
                ExitCode::from(2)
            }
        }
        Command::ShowConfig { config } => {
            let cfg = match config {
                Some(path) => match SimConfig::load(&path) {
                    Ok(c) => c,
                    Err(e) => {
                        eprintln!("configuration error: {e}");
                        return ExitCode::from(1);
                    }
                },
                None => SimConfig::default(),
            };
            print!("{}", cfg.render());
            ExitCode::SUCCESS
        }
    }
}
