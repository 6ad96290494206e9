//! Synthetic room traffic for load and determinism tests.
//!
//! Arrivals are a Poisson process over the session; each event is drawn from a fixed
//! mix of commands, verse attempts, chatter and gifts spanning both gift tiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::protocol::{Cny, RoomEvent};
use crate::verse::VerseCorpus;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub duration_ms: u64,
    pub events: usize,
    pub users: usize,
    pub seed: u64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self { duration_ms: 1_200_000, events: 2_000, users: 40, seed: 1 }
    }
}

const CHATTER: [&str; 6] = ["好美", "hello", "西湖真好看", "666", "first time here", "下雨了吗"];
const GIFT_CENTS: [u64; 6] = [100, 500, 990, 1000, 1500, 5200];

/// Exactly `spec.events` events with non-decreasing timestamps inside the session.
pub fn generate(spec: &TrafficSpec, corpus: &VerseCorpus) -> Vec<RoomEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users = spec.users.max(1);
    let mean_gap = spec.duration_ms as f64 / (spec.events as f64 + 1.0);
    let gaps = Exp::new(1.0 / mean_gap.max(1e-9)).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::with_capacity(spec.events);
    for _ in 0..spec.events {
        t += gaps.sample(&mut rng);
        // Wrap rather than clip so the count stays exact; the result is re-sorted below.
        let ts = (t as u64) % spec.duration_ms.max(1);
        let u = rng.random_range(0..users);
        let (id, name) = (format!("u{u}"), format!("viewer{u}"));
        let roll = rng.random_range(0..100);
        let ev = match roll {
            0..12 => RoomEvent::chat(&id, &name, ts, "release my lotus"),
            12..20 => RoomEvent::chat(&id, &name, ts, "dash my lotus"),
            20..30 => RoomEvent::chat(&id, &name, ts, "feed fish"),
            30..35 => RoomEvent::chat(&id, &name, ts, &format!("#MyStory greetings from {name}")),
            35..70 if !corpus.is_empty() => {
                let e = &corpus.entries()[rng.random_range(0..corpus.len())];
                RoomEvent::chat(&id, &name, ts, &e.display_text)
            }
            35..85 => RoomEvent::chat(&id, &name, ts, CHATTER[rng.random_range(0..CHATTER.len())]),
            _ => RoomEvent::gift(&id, &name, ts, Cny::from_cents(GIFT_CENTS[rng.random_range(0..GIFT_CENTS.len())])),
        };
        out.push(ev);
    }
    out.sort_by_key(|e| e.ts_ms);
    out
}
