//! Keyed random substreams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream whose seed
//! is a hash of `(master seed, key path)`. The draws therefore depend only on
//! *what* is being simulated, never on which thread gets there first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the key path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Labels,
    ClientLogits,
    ChannelGains,
    Thinning,
    PrivacyNoise,
    ChannelNoise,
    OrthogonalChannelNoise,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Labels => 1,
            StreamPurpose::ClientLogits => 2,
            StreamPurpose::ChannelGains => 3,
            StreamPurpose::Thinning => 4,
            StreamPurpose::PrivacyNoise => 5,
            StreamPurpose::ChannelNoise => 6,
            StreamPurpose::OrthogonalChannelNoise => 7,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stream keyed by the master seed and an arbitrary path of integers.
pub fn substream(master_seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = master_seed;
    let mut acc = splitmix64(&mut state);
    for &label in path {
        state ^= acc ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream for one purpose outside any query, e.g. dataset generation.
pub fn keyed_stream(master_seed: u64, purpose: StreamPurpose, index: usize) -> ChaCha8Rng {
    substream(master_seed, &[purpose.tag(), index as u64])
}

/// Stream for one purpose within one simulated query.
pub fn query_stream(master_seed: u64, sample: usize, purpose: StreamPurpose, client: usize) -> ChaCha8Rng {
    substream(master_seed, &[sample as u64, purpose.tag(), client as u64])
}
