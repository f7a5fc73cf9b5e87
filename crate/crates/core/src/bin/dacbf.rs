use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dacbf::config::{Mode, RunConfig};
use dacbf::sim::run;
use dacbf::trace::{export, sweep};

/// `h` below this counts as a safety violation.
const SAFETY_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "dacbf",
    version,
    about = "Delay-adaptive barrier-function safety filter simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and export its trace.
    Run {
        /// TOML run configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides the configured true delay (s).
        #[arg(long)]
        delay: Option<f64>,
        /// Output directory for header.toml, steps.csv, epochs.csv, summary.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every (delay, mode) pair and print the average-h table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated true delays (s).
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        delays: Vec<f64>,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "dacbf_baseline,proposed")]
        modes: Vec<Mode>,
        /// Output directory for sweep.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the built-in configuration as TOML.
    Defaults,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig, String> {
    match path {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(RunConfig::default()),
    }
}

fn main() -> ExitCode {
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
    match execute(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run {
            config,
            mode,
            delay,
            out,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(d) = delay {
                cfg.true_delay = d;
            }
            cfg.validate().map_err(|e| e.to_string())?;
            let trace = run(&cfg).map_err(|e| e.to_string())?;
            export(&trace, &out).map_err(|e| e.to_string())?;
            let s = &trace.summary;
            println!(
                "mode {} delay {:.3}: avg h {:.4}, min h {:.4e}, infeasible steps {}, final D̃_max {:.4e}, epochs {}",
                s.mode, s.true_delay, s.avg_h, s.min_h, s.infeasible_steps, s.final_d_tilde_max, s.epochs
            );
            if cfg.mode.asserts_safety() && s.min_h < -SAFETY_TOL {
                eprintln!("safety violation: min h = {:.6e}", s.min_h);
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            delays,
            modes,
            out,
        } => {
            let base = load(config.as_ref())?;
            let table = sweep(&base, &delays, &modes);
            print!("{}", table.render());
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            table.write_csv(&out.join("sweep.csv")).map_err(|e| e.to_string())?;
            let mut code = ExitCode::SUCCESS;
            for c in &table.cells {
                match &c.result {
                    Err(e) => {
                        eprintln!("{} at D = {}: {e}", c.mode, c.delay);
                        code = ExitCode::from(1);
                    }
                    Ok(s) if c.mode.asserts_safety() && s.min_h < -SAFETY_TOL => {
                        eprintln!(
                            "{} at D = {}: safety violation, min h = {:.6e}",
                            c.mode, c.delay, s.min_h
                        );
                        if code == ExitCode::SUCCESS {
                            code = ExitCode::from(2);
                        }
                    }
                    Ok(_) => {}
                }
            }
            Ok(code)
        }
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    }
}
