//! Deterministic RNG streams: every (purpose, epoch, sample) triple owns an
//! independent ChaCha stream derived from one master seed, so parallel work
//! reproduces bit-identically regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes keep unrelated draws decoupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Init = 1,
    Shuffle = 2,
    Sample = 3,
    DataGen = 4,
    Inference = 5,
}

const EPOCH_BITS: u32 = 28;
const SAMPLE_BITS: u32 = 28;

/// ChaCha stream for `(master_seed, purpose, epoch, sample)`.
pub fn stream_rng(master_seed: u64, purpose: StreamPurpose, epoch: u64, sample: u64) -> ChaCha8Rng {
    debug_assert!(epoch < 1 << EPOCH_BITS);
    debug_assert!(sample < 1 << SAMPLE_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let stream =
        ((purpose as u64) << (EPOCH_BITS + SAMPLE_BITS)) | (epoch << SAMPLE_BITS) | sample;
    rng.set_stream(stream);
    rng
}

/// FNV-1a over bytes; used for stable config hashes in manifests and
/// checkpoints.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
