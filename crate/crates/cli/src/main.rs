use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use sigpower_core::transport::{run_ue, SocketServer};
use sigpower_core::{
    oracle_allocate, run, run_with, sweep, AllocationResult, Error, RunStatus,
};

mod config;
mod report;

use config::{parse_range, ScenarioFile};
use report::format_float;

#[derive(Parser)]
#[command(name = "sigpower", version, about = "Power allocation with sigmoidal-like utilities")]
struct Cli {
    /// Log every protocol message.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario JSON file.
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the distributed algorithm and write the per-round trace as CSV.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Trace CSV path; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the damped algorithm for each budget and write one CSV row per budget.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Inclusive grid `start:end:step`.
        #[arg(long, conflicts_with = "values", required_unless_present = "values")]
        range: Option<String>,
        /// Explicit budgets.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve the centralized problem directly.
    Oracle {
        #[command(flatten)]
        config: ConfigArg,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Act as the base station: wait for every UE, then run the protocol.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed on stderr.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// How long to wait for the bids of one round.
        #[arg(long, default_value_t = 5000)]
        deadline_ms: u64,
        /// How long to wait for every UE to register.
        #[arg(long, default_value_t = 30_000)]
        register_ms: u64,
    },
    /// Act as one UE against a running `serve`.
    Ue {
        #[command(flatten)]
        config: ConfigArg,
        /// Zero-based index of this UE in the config's user list.
        #[arg(long)]
        user_index: usize,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

fn status_code(status: RunStatus) -> ExitCode {
    match status {
        RunStatus::Converged => ExitCode::SUCCESS,
        RunStatus::MaxIterationsReached => ExitCode::from(2),
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(" ")
}

fn summary(result: &AllocationResult) {
    eprintln!("status: {}", result.status.as_str());
    eprintln!("iterations: {}", result.iterations);
    eprintln!("final price: {}", format_float(result.final_price));
    eprintln!("final powers: {}", join(&result.final_powers));
    eprintln!("oracle gap: {}", format_float(result.oracle_gap));
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, output: path } => {
            let scenario = ScenarioFile::load(&config.config)?.scenario()?;
            let result = run(&scenario)?;
            let mut out = output(path.as_deref())?;
            report::write_trace(&mut out, &result, scenario.users.len()).map_err(csv_error)?;
            out.flush()?;
            summary(&result);
            Ok(status_code(result.status))
        }
        Command::Sweep {
            config,
            range,
            values,
            output: path,
        } => {
            let file = ScenarioFile::load(&config.config)?;
            let totals = match (range, values) {
                (Some(r), _) => parse_range(&r)?,
                (None, Some(v)) => v,
                (None, None) => unreachable!("clap requires one of --range/--values"),
            };
            let rows = sweep(&file.users, &totals, &file.sweep_settings())?;
            let mut out = output(path.as_deref())?;
            report::write_sweep(&mut out, &rows, file.users.len()).map_err(csv_error)?;
            out.flush()?;
            let stalled: Vec<String> = rows
                .iter()
                .filter(|r| r.status != RunStatus::Converged)
                .map(|r| format_float(r.total_power))
                .collect();
            if stalled.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("max_iterations reached at P_T = {}", stalled.join(", "));
                Ok(ExitCode::from(2))
            }
        }
        Command::Oracle { config, json } => {
            let scenario = ScenarioFile::load(&config.config)?.scenario()?;
            let r = oracle_allocate(&scenario.users, scenario.total_power, &scenario.solver)?;
            if json {
                let text = serde_json::to_string(&r).map_err(|e| Error::Parse(e.to_string()))?;
                println!("{text}");
            } else {
                for (i, p) in r.powers.iter().enumerate() {
                    println!("P_{} = {}", i + 1, format_float(*p));
                }
                println!("p* = {}", format_float(r.shadow_price));
                println!("kkt residual = {}", format_float(r.kkt_residual));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            config,
            host,
            port,
            deadline_ms,
            register_ms,
        } => {
            let scenario = ScenarioFile::load(&config.config)?.scenario()?;
            let server = SocketServer::bind((host.as_str(), port))?;
            eprintln!("listening on {}", server.local_addr()?);
            let mut backend = server.accept(scenario.users.len(), Duration::from_millis(register_ms))?;
            backend.set_deadline(Duration::from_millis(deadline_ms));
            let result = run_with(&scenario, &mut backend)?;
            for (i, p) in result.final_powers.iter().enumerate() {
                println!("P_{} = {}", i + 1, format_float(*p));
            }
            summary(&result);
            Ok(status_code(result.status))
        }
        Command::Ue {
            config,
            user_index,
            addr,
            timeout_ms,
        } => {
            let scenario = ScenarioFile::load(&config.config)?.scenario()?;
            let mut agents = scenario.agents()?;
            if user_index >= agents.len() {
                return Err(Error::InvalidParameter {
                    field: "user-index".into(),
                    reason: format!("{user_index} out of range for {} users", agents.len()),
                });
            }
            let agent = agents.swap_remove(user_index);
            let outcome = run_ue(addr.as_str(), agent, Duration::from_millis(timeout_ms))?;
            info!("user {user_index} stopped after {} messages", outcome.received.len());
            println!(
                "user {} power {} price {}",
                outcome.user_id,
                format_float(outcome.power),
                format_float(outcome.price)
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
