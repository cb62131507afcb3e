//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream identified by
//! `(seed, purpose, round, client, step)`. Streams are derived by hashing the
//! key, so the order in which clients execute never changes what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Population,
    EvalSplit,
    Selection,
    Batches,
    IidShards,
    Noise,
    Init,
    Centralized,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Population => 0x01,
            Purpose::EvalSplit => 0x02,
            Purpose::Selection => 0x03,
            Purpose::Batches => 0x04,
            Purpose::IidShards => 0x05,
            Purpose::Noise => 0x06,
            Purpose::Init => 0x07,
            Purpose::Centralized => 0x08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub round: u64,
    pub client: u64,
    pub step: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            purpose,
            round: 0,
            client: 0,
            step: 0,
        }
    }

    pub fn round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn client(mut self, client: u64) -> Self {
        self.client = client;
        self
    }

    pub fn step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    /// Collapses the key into a single 64-bit seed.
    pub fn derive(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for part in [self.purpose.tag(), self.round, self.client, self.step] {
            h = splitmix64(h ^ splitmix64(part));
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive())
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
