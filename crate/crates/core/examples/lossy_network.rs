//! Replication under 20% loss: how far each peer's view lags the truth.
//!
//! ```text
//! cargo run --example lossy_network [seed]
//! ```

use fungisync::netsync::view_error;
use fungisync::sim::{Engine, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/lossy_network.json"))??;
    if let Some(seed) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        scenario.seed = seed;
    }
    println!("link {:?}", scenario.link);
    let mut engine = Engine::new(&scenario)?;
    let every = scenario.tick_of(2.0);
    for _ in 0..=scenario.last_tick() {
        engine.step(&[]);
        let now = engine.tick() - 1;
        if now % every != 0 {
            continue;
        }
        let mut worst: f64 = 0.0;
        for observer in engine.agents().filter(|a| a.is_masked()) {
            let view = engine.view(observer.id).unwrap();
            for subject in engine.agents().filter(|a| a.id != observer.id) {
                if let Some(truth) = &subject.umwelt {
                    if let Ok(e) = view_error(view, truth, now) {
                        worst = worst.max(e);
                    }
                }
            }
        }
        let connected = engine
            .agents()
            .flat_map(|a| engine.sessions(a.id))
            .filter(|s| s.is_connected())
            .count();
        println!(
            "{:5.1} s  worst view error {worst:.4}  connected replicas {connected}",
            now as f64 * scenario.dt
        );
    }
    let stats = engine.net_stats();
    println!("sent {} dropped {} delivered {}", stats.sent, stats.dropped, stats.delivered);
    Ok(())
}
