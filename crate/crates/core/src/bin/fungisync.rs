use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use fungisync::sim::{metrics, run, verify, EventLog, Scenario, Verdict};

/// Deterministic umwelt-entanglement simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; write events.ndjson, metrics.json and digest.txt.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare two event logs and report the first divergence.
    Verify { a: PathBuf, b: PathBuf },
    /// Recompute metrics from an event log and print them as JSON.
    Metrics { events: PathBuf },
    /// Serve the live engine over WebSocket until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        scenario: PathBuf,
        /// Write a replayable scenario here on shutdown.
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path)
        .map_err(io_at(path))?
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn load_log(path: &Path) -> Result<EventLog, Failure> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    EventLog::from_ndjson(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FUNGISYNC_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (log, report) = run(&s).map_err(|e| Failure::Invalid(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(io_at(&out))?;
            let write = |name: &str, body: String| {
                let path = out.join(name);
                std::fs::write(&path, body).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
            };
            write("events.ndjson", log.to_ndjson())?;
            write(
                "metrics.json",
                serde_json::to_string_pretty(&report).expect("metrics serialize"),
            )?;
            let digest = log.digest();
            write("digest.txt", format!("{digest}\n"))?;
            println!("{digest}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { a, b } => match verify(&load_log(&a)?, &load_log(&b)?) {
            Verdict::Equal => {
                println!("equal");
                Ok(ExitCode::SUCCESS)
            }
            Verdict::FirstDivergence {
                tick, description, ..
            } => {
                println!("diverged at tick {tick}: {description}");
                Ok(ExitCode::from(1))
            }
        },
        Command::Metrics { events } => {
            let report = metrics(&load_log(&events)?);
            println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            port,
            scenario,
            record,
        } => {
            let s = load_scenario(&scenario)?;
            s.validate().map_err(|e| Failure::Invalid(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new()?;
            let recording = rt.block_on(fungisync::service::serve(&s, port)).map_err(|e| match e {
                fungisync::service::ServiceError::Scenario(e) => Failure::Invalid(e.to_string()),
                e => Failure::Io(e.to_string()),
            })?;
            println!("{}", recording.log.digest());
            if let Some(path) = record {
                std::fs::write(&path, recording.replay.to_json_pretty()).map_err(io_at(&path))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
