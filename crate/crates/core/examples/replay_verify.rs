//! Runs are pure functions of (scenario, seed): rerun, compare, and locate
//! the first divergence between seeds.
//!
//! ```text
//! cargo run --example replay_verify
//! ```

use fungisync::sim::{run, verify, EventLog, Scenario, Verdict};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let scenario = Scenario::load(&path)??;
        let (a, _) = run(&scenario)?;
        let (b, _) = run(&scenario)?;
        println!("{:<24} {} x2 -> {:?}", path.file_name().unwrap().to_string_lossy(), a.digest(), verify(&a, &b));
    }

    let mut scenario = Scenario::load(format!("{dir}/ritual_six.json"))??;
    scenario.seed = 1;
    let (one, _) = run(&scenario)?;
    scenario.seed = 2;
    let (two, _) = run(&scenario)?;
    if let Verdict::FirstDivergence { tick, description, .. } = verify(&one, &two) {
        println!("\nseed 1 vs 2, tick {tick}: {description}");
    }

    let text = one.to_ndjson();
    let back = EventLog::from_ndjson(&text)?;
    println!("\n{} lines of NDJSON, digest after reload {}", text.lines().count(), back.digest());
    Ok(())
}
