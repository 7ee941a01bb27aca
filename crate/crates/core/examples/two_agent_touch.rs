//! Two masked agents touch hands for twelve seconds, then part.
//!
//! ```text
//! cargo run --example two_agent_touch [scenario.json]
//! ```

use fungisync::model::AgentId;
use fungisync::sim::{run, Event, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two_agent_touch.json").into());
    let scenario = Scenario::load(&path)??;
    let (log, report) = run(&scenario)?;

    for (tick, event) in log.events() {
        match event {
            Event::MaskGrabbed { agent, kind } => println!("{:6.2} s  {agent} wears {kind}", tick as f64 * scenario.dt),
            Event::Session { agent, peer, from, to, .. } => {
                println!("{:6.2} s  {agent} -> {peer}: {from} -> {to}", tick as f64 * scenario.dt)
            }
            _ => {}
        }
    }

    println!("\n   t   richness(1)  foreign(1)  foreign(2)");
    let foreign = |agent: AgentId, t: u64| {
        log.events().find_map(|(tick, e)| match e {
            Event::Sample { agent: a, traces, .. } if *a == agent && tick == t => {
                Some(traces.iter().find(|t| !t.native).map_or(0.0, |t| t.intensity))
            }
            _ => None,
        })
    };
    for (t, e) in log.events() {
        if let Event::Sample { agent, richness, .. } = e {
            if *agent == AgentId(1) && t % 60 == 0 {
                println!(
                    "{:5.1}  {richness:>10}  {:>10.3}  {:>10.3}",
                    t as f64 * scenario.dt,
                    foreign(AgentId(1), t).unwrap_or(0.0),
                    foreign(AgentId(2), t).unwrap_or(0.0)
                );
            }
        }
    }

    for edge in &report.graph {
        println!("\nedge {}-{}: {} session(s), {:.2} s connected", edge.a, edge.b, edge.sessions, edge.seconds);
    }
    println!("digest {}", log.digest());
    Ok(())
}
