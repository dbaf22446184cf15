//! Named, seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream derived from the
//! experiment seed and a [`Stream`] tag, so adding or reordering consumers never
//! perturbs the others and client training is independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tag for a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainData,
    TestData,
    Partition,
    Init,
    /// Local training of client `k` during the initial FedAvg phase.
    ClientTrain(u32),
    /// Local training of client `k` after the unlearning round.
    ClientRecover(u32),
    Unlearn,
    FineTune,
    Mia,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::TrainData => 1,
            Stream::TestData => 2,
            Stream::Partition => 3,
            Stream::Init => 4,
            Stream::Unlearn => 5,
            Stream::FineTune => 6,
            Stream::Mia => 7,
            Stream::ClientTrain(k) => (1 << 32) | u64::from(k),
            Stream::ClientRecover(k) => (2 << 32) | u64::from(k),
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
