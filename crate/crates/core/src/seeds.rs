//! Reproducible random streams keyed by `(master_seed, agent, env, purpose)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Derives an independent stream by hashing the identifying tuple.
pub fn seed_stream(master_seed: u64, agent_id: u64, env_index: u64, purpose: &str) -> Stream {
    let mut h = Sha256::new();
    h.update(b"pbrl-stream-v1");
    h.update(master_seed.to_le_bytes());
    h.update(agent_id.to_le_bytes());
    h.update(env_index.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    Stream::from_seed(seed)
}

/// Serializable position of a [`Stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(rng: &Stream) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Stream {
        let mut rng = Stream::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
