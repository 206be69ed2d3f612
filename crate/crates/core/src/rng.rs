//! Seeded random streams. Every consumer derives its own stream from the
//! experiment seed and a label, so adding a consumer never shifts the draws
//! of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes followed by the little-endian indices.
fn stream_id(label: &str, indices: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = label.bytes().chain(indices.iter().flat_map(|i| i.to_le_bytes()));
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label, indices));
    rng
}
