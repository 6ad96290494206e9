//! Seeded, labeled random streams.
//!
//! Every draw site asks for its own stream by label. A stream's seed is derived from
//! the session seed and the label alone, so adding a new draw site never shifts the
//! values an existing site sees.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Streams {
    seed: u64,
    streams: BTreeMap<&'static str, ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed, streams: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, label: &'static str) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams.entry(label).or_insert_with(|| derive(seed, label))
    }
}

fn derive(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
