//! Counter-based seed derivation.
//!
//! Every random stream is a pure function of `(master, tag, index, stream
//! name)`, hashed with SHA-256 into a ChaCha12 key, so episodes can run in
//! any order on any number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub tag: String,
    pub index: u64,
}

impl SeedSpec {
    pub fn new(master: u64, tag: impl Into<String>, index: u64) -> Self {
        SeedSpec {
            master,
            tag: tag.into(),
            index,
        }
    }

    /// Independent named stream for this episode. Variable-length fields are
    /// length-prefixed so distinct inputs never share a hash preimage.
    pub fn stream(&self, name: &str) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"pomdp-lab/seed/v1");
        hasher.update(self.master.to_le_bytes());
        hasher.update((self.tag.len() as u64).to_le_bytes());
        hasher.update(self.tag.as_bytes());
        hasher.update(self.index.to_le_bytes());
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(key)
    }
}
