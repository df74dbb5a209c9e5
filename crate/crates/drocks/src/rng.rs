//! Deterministic random-stream derivation.
//!
//! Every stochastic choice in the toolkit (kernel parameters, fresh-seed
//! draws, mini-batch shuffles, data partitioning) draws from a ChaCha8
//! stream whose 64-bit seed is derived from the relevant identifiers via
//! SplitMix64. ChaCha8 and SplitMix64 are both published, portable
//! algorithms, so a seed transmitted on the wire reproduces the same
//! kernel everywhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer (Steele, Lea & Flood; the `splitmix64` reference
/// constants). Used as the documented mixing hash for stream derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `seed`, one SplitMix64 round per tag.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// A ChaCha8 stream keyed by `mix(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

// Domain-separation tags for the independent streams of one experiment.
pub const TAG_KERNEL: u64 = 0x4B45_524E; // kernel parameter draws
pub const TAG_INITIAL: u64 = 0x494E_4954; // initial hand-off seed draw
pub const TAG_FRESH: u64 = 0x4652_4553; // per-client fresh-seed draws
pub const TAG_TOPOLOGY: u64 = 0x544F_504F; // per-round visiting order
pub const TAG_SHARED: u64 = 0x5348_5244; // broadcast kernel set (FedAvg)
pub const TAG_PARTITION: u64 = 0x5041_5254; // i.i.d. split shuffles
pub const TAG_SHUFFLE: u64 = 0x5348_5546; // mini-batch shuffles
pub const TAG_REPEAT: u64 = 0x5250_5431; // per-repeat master seeds
pub const TAG_SYNTH: u64 = 0x53594E54; // synthetic fixture generation
