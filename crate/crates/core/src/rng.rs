//! Seeded random streams.
//!
//! Every (run, agent) pair gets its own ChaCha8 stream: the run seed selects
//! the key and the agent index selects the stream id, so agents never share
//! generator state and a run replays bit-exactly from its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn agent_stream(run_seed: u64, agent: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(agent);
    rng
}
