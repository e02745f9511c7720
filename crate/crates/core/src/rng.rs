//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha20 stream keyed by the run
//! seed and a stream id derived from a component label, so components never
//! share state and a corpus or training run is a pure function of its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Stream = ChaCha20Rng;

/// FNV-1a over the label bytes followed by the little-endian index.
fn stream_id(label: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    label
        .as_bytes()
        .iter()
        .chain(index.to_le_bytes().iter())
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Independent stream for component `label`, instance `index`.
pub fn substream(seed: u64, label: &str, index: u64) -> Stream {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label, index));
    rng
}
