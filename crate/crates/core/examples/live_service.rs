//! Starts the live service, drives it from two WebSocket clients, then
//! replays the recorded commands through the batch engine.
//!
//! ```text
//! cargo run --example live_service
//! ```

use std::time::Duration;

use fungisync::service::{start, Outbound};
use fungisync::sim::{run, verify, Scenario};
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio_tungstenite::{connect_async, tungstenite::Message};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let handle = start(&Scenario::new(3600.0, 9), "127.0.0.1:0".parse()?).await?;
    let url = format!("ws://{}/ws", handle.local_addr());
    println!("serving on {url}");

    let (mut a, _) = connect_async(&url).await?;
    let (mut b, _) = connect_async(&url).await?;
    let cmds_a = [
        json!({"type": "cmd", "op": "spawn_agent", "id": 1}),
        json!({"type": "cmd", "op": "grab_mask", "id": 1}),
        json!({"type": "cmd", "op": "move_agent", "id": 1, "position": [0, 0, 0], "facing": [1, 0, 0]}),
        json!({"type": "cmd", "op": "move_hand", "id": 1, "position": [0.3, 0, 1.2]}),
    ];
    let cmds_b = [
        json!({"type": "cmd", "op": "spawn_agent", "id": 2}),
        json!({"type": "cmd", "op": "grab_mask", "id": 2}),
        json!({"type": "cmd", "op": "move_agent", "id": 2, "position": [0.65, 0, 0], "facing": [-1, 0, 0]}),
        json!({"type": "cmd", "op": "move_hand", "id": 2, "position": [0.35, 0, 1.2]}),
        json!({"type": "cmd", "op": "grab_mask", "id": 5}),
    ];
    for c in cmds_a {
        a.send(Message::text(c.to_string())).await?;
    }
    for c in cmds_b {
        b.send(Message::text(c.to_string())).await?;
    }

    let watch = async {
        while let Some(Ok(Message::Text(text))) = a.next().await {
            if let Ok(Outbound::State(s)) = serde_json::from_str(text.as_str()) {
                let sessions: Vec<_> = s.sessions.iter().map(|x| format!("{}>{} {}", x.pair[0], x.pair[1], x.state)).collect();
                let foreign: Vec<_> = s
                    .agents
                    .iter()
                    .flat_map(|ag| ag.traces.iter().filter(|t| !t.native).map(move |t| format!("{}:{} {:.3}", ag.id, t.kind, t.intensity)))
                    .collect();
                println!("tick {:4}  {:?}  {:?}", s.tick, sessions, foreign);
            }
        }
    };
    let _ = tokio::time::timeout(Duration::from_secs(2), watch).await;
    if let Some(Ok(Message::Text(text))) = b.next().await {
        println!("client b received {text}");
    }

    let rec = handle.stop().await?;
    let (replayed, _) = run(&rec.replay)?;
    println!(
        "live {} / replay {}: {:?}",
        rec.log.digest(),
        replayed.digest(),
        verify(&rec.log, &replayed)
    );
    Ok(())
}
