// SPDX-License-Identifier: Apache-2.0

//! Seeded random streams.
//!
//! Every generator is a ChaCha8 instance keyed by `seed_from_u64(seed)` with
//! the ChaCha stream id set to one of the [`Stream`] constants, so the PRNU,
//! the additive noise and the scene texture drawn from one seed never share
//! keystream. Per-item seeds (image `i` of a pool, split `s`, trial `t`) come
//! from [`derive_seed`], a SplitMix64 mix of the master seed and the index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prnu = 1,
    Noise = 2,
    Texture = 3,
    Split = 4,
    Trial = 5,
    Subset = 6,
    Bootstrap = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` of the family `tag` under `master`.
pub fn derive_seed(master: u64, tag: Stream, index: u64) -> u64 {
    splitmix64(master ^ splitmix64((tag as u64) << 56 ^ index))
}
