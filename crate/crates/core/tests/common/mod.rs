#![allow(dead_code)]

use std::path::PathBuf;

use fungisync::model::{AgentId, Tick};
use fungisync::netsync::LinkConfig;
use fungisync::sim::{Action, AgentScript, Engine, Event, EventLog, Scenario, TimedAction};
use glam::DVec3;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Every scenario shipped in `scenarios/`, sorted by file name.
pub fn shipped() -> Vec<(String, Scenario)> {
    let mut paths: Vec<_> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let s = Scenario::load(&p).expect("readable").expect("valid");
            (name, s)
        })
        .collect()
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(scenarios_dir().join(format!("{name}.json")))
        .expect("readable")
        .expect("valid")
}

pub fn at(at: f64, action: Action) -> TimedAction {
    TimedAction { at, action }
}

pub fn hand_to(x: f64, z: f64) -> Action {
    Action::HandTo {
        offset: DVec3::new(x, 0.0, z),
    }
}

/// Agent 1 at the origin facing +x, agent 2 at 0.65 m on the x axis. Both
/// grab a mask at t = 0 and hold their hands `gap` apart, at 1.2 m height,
/// from `from` to `until` seconds. `facing_2` sets agent 2's facing.
pub fn pair_scenario(gap: f64, from: f64, until: f64, duration: f64, facing_2: DVec3) -> Scenario {
    let mut s = Scenario::new(duration, 1);
    s.link = LinkConfig::ideal();
    s.agents = vec![
        AgentScript {
            id: AgentId(1),
            position: DVec3::ZERO,
            facing: DVec3::X,
            hand_offset: DVec3::new(0.0, 0.0, 1.0),
            script: vec![
                at(0.0, Action::GrabMask),
                at(from, hand_to(0.3, 1.2)),
                at(until, hand_to(0.0, 1.0)),
            ],
        },
        AgentScript {
            id: AgentId(2),
            position: DVec3::new(0.65, 0.0, 0.0),
            facing: facing_2,
            hand_offset: DVec3::new(0.0, 0.0, 1.0),
            script: vec![
                at(0.0, Action::GrabMask),
                at(from, hand_to(-0.35 + gap, 1.2)),
                at(until, hand_to(0.0, 1.0)),
            ],
        },
    ];
    s
}

/// Session transitions `(tick, agent, peer, from, to)` in log order.
pub fn transitions(log: &EventLog) -> Vec<(Tick, AgentId, AgentId, String, String)> {
    log.events()
        .filter_map(|(t, e)| match e {
            Event::Session {
                agent, peer, from, to, ..
            } => Some((t, *agent, *peer, from.clone(), to.clone())),
            _ => None,
        })
        .collect()
}

pub fn ever_connected(log: &EventLog, agent: AgentId) -> bool {
    transitions(log)
        .iter()
        .any(|(_, a, _, _, to)| *a == agent && to == "connected")
}

/// Runs `scenario` to completion, handing the engine to `inspect` after
/// every tick.
pub fn run_with(scenario: &Scenario, mut inspect: impl FnMut(&Engine)) -> EventLog {
    let mut engine = Engine::new(scenario).expect("valid scenario");
    for _ in 0..=scenario.last_tick() {
        engine.step(&[]);
        inspect(&engine);
    }
    engine.finish()
}

/// Forward-Euler integration of `dI/dt = k·g·(donor − I)` from `I = 0`
/// over `t` seconds at step `h`.
pub fn reference_intensity(k: f64, g: f64, donor: f64, t: f64, h: f64) -> f64 {
    let steps = (t / h).round() as usize;
    let mut i = 0.0;
    for _ in 0..steps {
        i += k * g * (donor - i) * h;
    }
    i
}

pub mod ws;
