//! Seed derivation. Every random stream in a run descends from the single
//! configured 64-bit seed through [`mix`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source driving every chain.
pub type SimRng = ChaCha8Rng;

/// Stream label of the target chain `X`.
pub const STREAM_X: u64 = 0x5854_4152_4745_5400; // "XTARGET"
/// Stream label of the auxiliary chain `Y`.
pub const STREAM_Y: u64 = 0x5941_5558_494c_0000; // "YAUXIL"
/// Stream label of the one-step drift diagnostic.
pub const STREAM_DRIFT: u64 = 0x4452_4946_5400_0000; // "DRIFT"

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `mix(seed, i) = splitmix64(seed ^ splitmix64(i))`.
///
/// Used both for per-repeat seeds (`i` = run index) and per-chain streams
/// (`i` = stream label).
#[inline]
pub fn mix(seed: u64, i: u64) -> u64 {
    splitmix64(seed ^ splitmix64(i))
}

pub fn stream(seed: u64, label: u64) -> SimRng {
    SimRng::seed_from_u64(mix(seed, label))
}
