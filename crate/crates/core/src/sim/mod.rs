//! Deterministic simulation harness: scenarios in, event logs and metrics out.

pub mod command;
pub mod engine;
pub mod log;
pub mod metrics;
pub mod scenario;

pub use command::{ClientCommand, CommandError, ErrorCode};
pub use engine::Engine;
pub use log::{verify, Digest, Event, EventLog, LogEntry, Verdict};
pub use metrics::{metrics, MetricsReport};
pub use scenario::{Action, AgentScript, RecordedCommand, Scenario, ScenarioError, TimedAction};

/// Runs a scenario to completion: ticks `0..=last_tick`.
pub fn run(scenario: &Scenario) -> Result<(EventLog, MetricsReport), ScenarioError> {
    let mut engine = Engine::new(scenario)?;
    for _ in 0..=scenario.last_tick() {
        engine.step(&[]);
    }
    let log = engine.finish();
    let report = metrics(&log);
    Ok((log, report))
}
