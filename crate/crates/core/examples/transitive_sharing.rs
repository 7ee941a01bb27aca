//! A touches B, then C. C ends up holding B's element without ever meeting B.
//!
//! ```text
//! cargo run --example transitive_sharing
//! ```

use fungisync::model::AgentId;
use fungisync::sim::{Engine, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/transitive_sharing.json"))??;
    let mut engine = Engine::new(&scenario)?;
    let every = scenario.tick_of(5.0);
    for _ in 0..=scenario.last_tick() {
        engine.step(&[]);
        let now = engine.tick() - 1;
        if now % every != 0 {
            continue;
        }
        print!("{:4.0} s", now as f64 * scenario.dt);
        for id in 1..=3 {
            let Some(u) = engine.agent(AgentId(id)).and_then(|a| a.umwelt.as_ref()) else { continue };
            let traces: Vec<String> = u
                .traces()
                .map(|t| format!("{}<{}>{:.2}", t.kind, t.origin, t.intensity))
                .collect();
            print!("  | {}: {}", AgentId(id), traces.join(" "));
        }
        println!();
    }
    Ok(())
}
