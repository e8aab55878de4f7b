use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use care_cli::{
    cmd_compare, cmd_run, cmd_sweep, metrics_summary, parse_seeds, parse_strategies, CliError, RunArgs, SweepParam,
    EXIT_LIVENESS, EXIT_OK, EXIT_USAGE,
};
use care_core::Strategy;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "care", version, about = "Multi-robot coverage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its logs and renders.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's strategy (care, nonco, fr).
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Dump the map every this many ticks.
        #[arg(long)]
        snapshot_every: Option<u64>,
    },
    /// Paired comparison of strategies over a seed list.
    Compare {
        scenario: PathBuf,
        #[arg(long, default_value = "care,nonco,fr")]
        strategies: String,
        /// Seeds as `1,2,3` or `1-5`.
        #[arg(long, default_value = "1-5")]
        seeds: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare strategies while varying one parameter.
    Sweep {
        scenario: PathBuf,
        /// One of n, lambda, kappa1, kappa2, sigma.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "care")]
        strategies: String,
        #[arg(long, default_value = "1-3")]
        seeds: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn execute(cmd: Command) -> Result<i32, CliError> {
    let stdout = io::stdout();
    match cmd {
        Command::Run { scenario, seed, strategy, out_dir, snapshot_every } => {
            let out = cmd_run(&scenario, &RunArgs { seed, strategy, out_dir, snapshot_every })?;
            print!("{}", metrics_summary(&out.metrics));
            if out.metrics.liveness_violation {
                eprintln!("liveness violation: run stopped at tick {} before full coverage", out.metrics.ticks);
                return Ok(EXIT_LIVENESS);
            }
        }
        Command::Compare { scenario, strategies, seeds, out_dir } => {
            let cmp =
                cmd_compare(&scenario, &parse_strategies(&strategies)?, &parse_seeds(&seeds)?, out_dir.as_deref())?;
            cmp.write_table(stdout.lock())?;
            if cmp.runs.iter().any(|r| r.metrics.liveness_violation) {
                return Ok(EXIT_LIVENESS);
            }
        }
        Command::Sweep { scenario, param, values, strategies, seeds, out_dir } => {
            let sweep = cmd_sweep(
                &scenario,
                param,
                &values,
                &parse_strategies(&strategies)?,
                &parse_seeds(&seeds)?,
                out_dir.as_deref(),
            )?;
            sweep.write_table(stdout.lock())?;
            if sweep.points.iter().flat_map(|(_, c)| &c.runs).any(|r| r.metrics.liveness_violation) {
                return Ok(EXIT_LIVENESS);
            }
        }
    }
    stdout.lock().flush()?;
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARE_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
