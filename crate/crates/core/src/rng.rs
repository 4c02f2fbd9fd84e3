//! Deterministic random-number streams.
//!
//! A run is driven by one master seed. Every path (or other independent unit
//! of work) draws from its own ChaCha8 stream, selected by the pair
//! `(purpose, index)`:
//!
//! ```text
//! key    = master seed, expanded by ChaCha's `seed_from_u64`
//! stream = (purpose << 48) | index        (index < 2^48)
//! ```
//!
//! Streams are a pure function of `(seed, purpose, index)`, so the output of a
//! Monte Carlo loop does not depend on how paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

/// Stream purposes. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Brownian = 1,
    Jacobi = 2,
    DefaultTime = 3,
    Recovery = 4,
    Density = 5,
    Admissibility = 6,
    Martingale = 7,
    Pricing = 8,
}

const INDEX_BITS: u32 = 48;

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> PathRng {
    debug_assert!(index < (1u64 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | (index & ((1u64 << INDEX_BITS) - 1)));
    rng
}
