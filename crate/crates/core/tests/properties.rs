use std::collections::BTreeSet;

use fungisync::dynamics::{step_decay, step_transfer, DynamicsParams, Protected};
use fungisync::model::{AgentId, ElementKind, ElementTrace, MaskPool, PoolError, Umwelt, MASK_CAPACITY};
use fungisync::netsync::{LinkConfig, MessageBody, NetMessage, PeerView, SimNetwork};
use fungisync::proximity::{detect, ProximityConfig, ProximityEvent};
use glam::DVec3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kind() -> impl Strategy<Value = ElementKind> {
    prop::sample::select(ElementKind::ALL.to_vec())
}

fn umwelt(owner: u32) -> impl Strategy<Value = Umwelt> {
    (kind(), prop::collection::vec((kind(), 0.0..=1.0f64, 0.0..=1.0f64, 1u32..8), 0..5)).prop_map(
        move |(native, foreign)| {
            let mut u = Umwelt::new(AgentId(owner), native);
            for (kind, intensity, spread, origin) in foreign {
                u.set_foreign(ElementTrace {
                    kind,
                    intensity,
                    spread,
                    native: false,
                    origin: AgentId(origin),
                });
            }
            u
        },
    )
}

fn level(u: &Umwelt, k: ElementKind) -> f64 {
    u.get(k).map_or(0.0, |t| t.intensity)
}

#[derive(Debug, Clone)]
enum PoolOp {
    Grab(u32),
    Return(u32),
}

fn pool_op() -> impl Strategy<Value = PoolOp> {
    prop_oneof![(1u32..10).prop_map(PoolOp::Grab), (1u32..10).prop_map(PoolOp::Return)]
}

proptest! {
    #[test]
    fn pool_never_exceeds_capacity(seed: u64, ops in prop::collection::vec(pool_op(), 0..200)) {
        let mut pool = MaskPool::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = BTreeSet::new();
        for op in ops {
            match op {
                PoolOp::Grab(a) => match pool.grab_mask(AgentId(a), &mut rng) {
                    Ok(_) => { prop_assert!(model.insert(a)); }
                    Err(PoolError::AlreadyHeld(_)) => prop_assert!(model.contains(&a)),
                    Err(PoolError::PoolExhausted) => prop_assert_eq!(model.len(), MASK_CAPACITY),
                    Err(e) => prop_assert!(false, "{e}"),
                },
                PoolOp::Return(a) => {
                    prop_assert_eq!(pool.return_mask(AgentId(a)).is_ok(), model.remove(&a));
                }
            }
            prop_assert!(pool.held().len() <= MASK_CAPACITY);
            let held: BTreeSet<u32> = pool.held().iter().map(|a| a.0).collect();
            prop_assert_eq!(&held, &model);
        }
    }

    #[test]
    fn grab_then_return_restores_the_held_set(seed: u64, pre in prop::collection::btree_set(1u32..20, 0..5), a in 20u32..30) {
        let mut pool = MaskPool::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &p in &pre {
            pool.grab_mask(AgentId(p), &mut rng).unwrap();
        }
        let before = pool.held().clone();
        pool.grab_mask(AgentId(a), &mut rng).unwrap();
        pool.return_mask(AgentId(a)).unwrap();
        prop_assert_eq!(pool.held(), &before);
    }

    #[test]
    fn any_five_consecutive_fresh_draws_are_distinct(seed: u64) {
        let mut pool = MaskPool::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds: BTreeSet<_> = (1..=5).map(|a| pool.grab_mask(AgentId(a), &mut rng).unwrap()).collect();
        prop_assert_eq!(kinds.len(), 5);
    }

    #[test]
    fn transfer_and_decay_keep_traces_in_bounds(
        mut receiver in umwelt(1),
        donor in umwelt(2),
        g in 0.2..=1.0f64,
        steps in prop::collection::vec(any::<bool>(), 1..300),
    ) {
        let params = DynamicsParams::default();
        for touching in steps {
            let protected = if touching {
                step_transfer(&mut receiver, &donor, g, &params)
            } else {
                Protected::new()
            };
            step_decay(&mut receiver, &protected, &params);
            prop_assert!(receiver.check_invariants().is_ok(), "{:?}", receiver.check_invariants());
            for t in receiver.traces() {
                prop_assert!((0.0..=1.0).contains(&t.intensity) && (0.0..=1.0).contains(&t.spread));
            }
            let native = receiver.get(receiver.native_kind()).unwrap();
            prop_assert_eq!((native.intensity, native.spread), (1.0, 1.0));
        }
    }

    #[test]
    fn transfer_never_lowers_and_never_overshoots(receiver in umwelt(1), donor in umwelt(2), g in 0.2..=1.0f64) {
        let params = DynamicsParams::default();
        let mut after = receiver.clone();
        let protected = step_transfer(&mut after, &donor, g, &params);
        for k in ElementKind::ALL {
            prop_assert!(level(&after, k) >= level(&receiver, k));
            if protected.contains(&k) {
                prop_assert!(level(&after, k) <= level(&donor, k));
                prop_assert!(level(&after, k) - level(&receiver, k) <= params.k_transfer * g * params.dt);
            } else {
                prop_assert_eq!(level(&after, k), level(&receiver, k));
            }
        }
    }

    #[test]
    fn decay_is_monotone_and_removes_only_exhausted_traces(mut u in umwelt(1), ticks in 1usize..700) {
        let params = DynamicsParams::default();
        let none = Protected::new();
        for _ in 0..ticks {
            let before = u.clone();
            step_decay(&mut u, &none, &params);
            for t in before.foreign() {
                match u.get(t.kind) {
                    Some(now) => prop_assert!(now.intensity <= t.intensity && now.intensity > 0.0),
                    None => prop_assert!(t.intensity <= params.r_decay * params.dt + 1e-12),
                }
            }
        }
    }

    #[test]
    fn detection_respects_the_hysteresis_band(d in 0.0..0.5f64, connected: bool, age in 0.0..0.6f64) {
        let cfg = ProximityConfig::default();
        let hand = DVec3::new(0.2, -0.1, 1.1);
        let event = detect(hand, Some((hand + DVec3::Y * d, age)), &cfg, connected);
        match event {
            ProximityEvent::Enter => prop_assert!(!connected && d < cfg.enter_dist),
            ProximityEvent::Exit => prop_assert!(connected && d > cfg.exit_dist),
            ProximityEvent::Stale => prop_assert!(age > cfg.stale_timeout),
            ProximityEvent::Within => prop_assert!(
                age <= cfg.stale_timeout + 1e-9
                    && (connected && d <= cfg.exit_dist || !connected && d >= cfg.enter_dist)
            ),
        }
    }

    #[test]
    fn delivery_schedule_is_a_function_of_the_seed(seed: u64, loss in 0.0..0.9f64, reorder: bool) {
        let link = LinkConfig { loss_prob: loss, reorder, ..LinkConfig::default() };
        let schedule = || {
            let mut net = SimNetwork::new(link, 0.05, seed);
            let mut out = Vec::new();
            for now in 0..100 {
                let msg = NetMessage {
                    sent: now,
                    from: AgentId((now % 3) as u32),
                    to: AgentId(9),
                    seq: now + 1,
                    body: MessageBody::PoseUpdate {
                        position: DVec3::ZERO,
                        facing: DVec3::X,
                        hand_position: DVec3::ZERO,
                        tick: now,
                    },
                };
                out.push(net.send(msg, now));
                out.extend(net.deliver_due(now).iter().map(|m| Some(m.seq)));
            }
            out
        };
        prop_assert_eq!(schedule(), schedule());
    }

    #[test]
    fn peer_view_is_latest_wins_in_any_order(order in Just((1u64..=12).collect::<Vec<_>>()).prop_shuffle()) {
        let pose = |seq: u64| NetMessage {
            sent: seq,
            from: AgentId(1),
            to: AgentId(2),
            seq,
            body: MessageBody::PoseUpdate {
                position: DVec3::X * seq as f64,
                facing: DVec3::X,
                hand_position: DVec3::ZERO,
                tick: seq,
            },
        };
        let mut view = PeerView::new(AgentId(2), 0.0);
        for (i, &seq) in order.iter().enumerate() {
            view.apply(&pose(seq), i as u64);
            let best = order[..=i].iter().max().unwrap();
            prop_assert_eq!(view.pose(AgentId(1)).unwrap().seq, *best);
        }
        prop_assert_eq!(view.pose(AgentId(1)).unwrap().value.position.x, 12.0);
    }
}
