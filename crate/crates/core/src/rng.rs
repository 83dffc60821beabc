//! Seeded randomness split per purpose.
//!
//! A run owns one master seed; each consumer (initialisation, batch shuffling,
//! augmentation, detector jitter, ...) draws from its own ChaCha stream so that
//! adding draws in one place never shifts another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Detector = 4,
    SynthLayout = 5,
    SynthCaptions = 6,
    SynthPixels = 7,
    Split = 8,
    Check = 9,
}

pub fn stream(seed: u64, purpose: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Stream keyed by an extra index, e.g. one per scene for order-independent
/// parallel draws.
pub fn indexed_stream(seed: u64, purpose: Stream, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose as u64);
    rng
}

/// FNV-1a, used to key per-scene streams from scene ids.
pub fn key_of(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
