//! Counter-based random streams.
//!
//! Every Monte Carlo sample owns its randomness: a Philox4x32-10 generator
//! whose 128-bit counter holds `(block, lane, sample)`. Deriving the stream
//! for sample `i` costs nothing, so results depend only on the seed and the
//! sample index, never on how samples are spread across threads.

use rand_core::{impls, RngCore};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Lane reserved for the Brownian increments of a sample. Other lanes are
/// indexed by the auxiliary draw index.
pub const MAIN_LANE: u32 = u32::MAX;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// The raw Philox4x32 bijection with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, ctr[0]);
        let (hi1, lo1) = mulhilo(M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed family of streams, one per `(sample, lane)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamFamily {
    key: [u32; 2],
}

impl StreamFamily {
    /// Derives a family from a user seed and a purpose tag, so that e.g. the
    /// pilot run and the main run never share draws.
    pub fn new(seed: u64, purpose: u64) -> Self {
        let k = splitmix64(seed ^ splitmix64(purpose.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self { key: [k as u32, (k >> 32) as u32] }
    }

    pub fn stream(&self, sample: u64, lane: u32) -> Philox {
        Philox::new(self.key, sample, lane)
    }

    /// One uniform 32-bit word for `(sample, lane)`, without building a stream.
    #[inline]
    pub fn word(&self, sample: u64, lane: u32) -> u32 {
        philox4x32_10([0, lane, sample as u32, (sample >> 32) as u32], self.key)[0]
    }
}

#[derive(Clone, Debug)]
pub struct Philox {
    key: [u32; 2],
    ctr: [u32; 4],
    buf: [u32; 4],
    used: usize,
}

impl Philox {
    pub fn new(key: [u32; 2], sample: u64, lane: u32) -> Self {
        Self { key, ctr: [0, lane, sample as u32, (sample >> 32) as u32], buf: [0; 4], used: 4 }
    }

    #[inline]
    fn refill(&mut self) {
        self.buf = philox4x32_10(self.ctr, self.key);
        self.ctr[0] = self.ctr[0].wrapping_add(1);
        self.used = 0;
    }
}

impl RngCore for Philox {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        if self.used > 2 {
            self.refill();
        }
        let v = (self.buf[self.used] as u64) | ((self.buf[self.used + 1] as u64) << 32);
        self.used += 2;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
