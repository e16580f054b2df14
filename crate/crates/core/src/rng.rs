//! Reproducible random streams.
//!
//! Every stream is keyed by the master seed and a path of indices
//! (replicate, bootstrap draw, ...). The key is hashed into a ChaCha seed, so
//! a stream's contents never depend on which worker draws it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Stream tags used as the first path element by the simulation harness.
pub mod tag {
    pub const REPLICATE: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const CALIBRATION: u64 = 3;
    pub const VERIFICATION: u64 = 4;
    pub const RESTART: u64 = 5;
}

/// Independent stream for `(seed, path...)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"icsieve-stream");
    hasher.update(seed.to_le_bytes());
    hasher.update((path.len() as u64).to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}
