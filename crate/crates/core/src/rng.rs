//! Keyed random streams.
//!
//! Each consumer derives an independent ChaCha8 stream from the run seed and
//! a record key, so draws never depend on iteration or completion order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Accumulates key material into a 64-bit stream id.
#[derive(Debug, Clone)]
pub struct StreamKey {
    state: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl StreamKey {
    pub fn new(domain: &str, seed: u64) -> Self {
        let mut key = StreamKey { state: FNV_OFFSET };
        key.absorb(domain.as_bytes());
        key.absorb(&seed.to_le_bytes());
        key
    }

    fn absorb(&mut self, bytes: &[u8]) {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        for b in (bytes.len() as u64).to_le_bytes().iter().chain(bytes) {
            self.state ^= u64::from(*b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn str(mut self, s: &str) -> Self {
        self.absorb(s.as_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.absorb(&v.to_le_bytes());
        self
    }

    pub fn opt(mut self, v: Option<u64>) -> Self {
        match v {
            Some(v) => {
                self.absorb(&[1]);
                self.absorb(&v.to_le_bytes());
            }
            None => self.absorb(&[0]),
        }
        self
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn finish(&self) -> u64 {
        splitmix64(self.state)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
