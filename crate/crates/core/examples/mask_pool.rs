//! Six masks, five elements, seeded assignment without replacement.
//!
//! ```text
//! cargo run --example mask_pool [seed]
//! ```

use fungisync::model::{AgentId, MaskPool};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = MaskPool::new();

    for id in 1..=7 {
        match pool.grab_mask(AgentId(id), &mut rng) {
            Ok(kind) => println!("{} grabs {kind:<10} deck left {:?}", AgentId(id), pool.deck()),
            Err(e) => println!("{} refused: {e}", AgentId(id)),
        }
    }
    println!("double grab: {:?}", pool.grab_mask(AgentId(2), &mut rng));

    pool.return_mask(AgentId(3)).unwrap();
    println!("agent-3 returns; held {}", pool.held().len());
    match pool.grab_mask(AgentId(7), &mut rng) {
        Ok(kind) => println!("agent-7 grabs {kind}"),
        Err(e) => println!("agent-7 refused: {e}"),
    }
}
