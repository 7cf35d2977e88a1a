//! Named random substreams derived from one master seed.
//!
//! Each purpose gets its own ChaCha stream, so drawing more numbers for one
//! purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Training = 3,
    Sampling = 4,
    Split = 5,
    Features = 6,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Independent stream per item (e.g. per video), keyed by `index`.
pub fn indexed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}

const BLOB_LEN: usize = 32 + 8 + 16;

/// Serialises the full generator position: key, stream id and word offset.
pub fn save_state(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(BLOB_LEN);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn load_state(blob: &[u8]) -> Result<ChaCha8Rng> {
    if blob.len() != BLOB_LEN {
        return Err(Error::Format(format!("rng state of {} bytes, expected {BLOB_LEN}", blob.len())));
    }
    let seed: [u8; 32] = blob[..32].try_into().expect("length checked");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(blob[32..40].try_into().expect("length checked")));
    rng.set_word_pos(u128::from_le_bytes(blob[40..].try_into().expect("length checked")));
    Ok(rng)
}
