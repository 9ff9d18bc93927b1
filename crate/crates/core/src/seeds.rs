//! Seeded RNG streams. Every random draw in the crate comes from a
//! `ChaCha8Rng` whose seed is a pure function of the caller's inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `tag` into `seed` (SplitMix64 finalizer).
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for trial `trial` of cell `cell` under `master`.
pub fn trial_rng(master: u64, cell: u64, trial: u64) -> Rng {
    let mut r = rng(derive(master, cell));
    r.set_stream(trial);
    r
}
