//! Named random substreams derived from one run seed.
//!
//! Each consumer of randomness draws from its own ChaCha stream, so changing
//! how many numbers one consumer takes never shifts another's sequence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Substream {
    PriorInit,
    ControlInit,
    PathNoise,
    ComponentDraw,
    Mala,
    Refine,
    Eval,
    Smc,
    Target,
}

impl Substream {
    fn stream_id(self) -> u64 {
        match self {
            Substream::PriorInit => 1,
            Substream::ControlInit => 2,
            Substream::PathNoise => 3,
            Substream::ComponentDraw => 4,
            Substream::Mala => 5,
            Substream::Refine => 6,
            Substream::Eval => 7,
            Substream::Smc => 8,
            Substream::Target => 9,
        }
    }
}

pub fn substream(seed: u64, which: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.stream_id());
    rng
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Noise source for path simulation: Gaussian increments and mixture-component draws
/// come from separate streams.
#[derive(Debug, Clone)]
pub struct PathRngs {
    pub noise: ChaCha8Rng,
    pub components: ChaCha8Rng,
}

impl PathRngs {
    pub fn training(seed: u64) -> Self {
        Self {
            noise: substream(seed, Substream::PathNoise),
            components: substream(seed, Substream::ComponentDraw),
        }
    }

    /// Streams for evaluation batches, disjoint from the training streams.
    pub fn evaluation(seed: u64) -> Self {
        let mut noise = substream(seed, Substream::Eval);
        let mut components = substream(seed, Substream::Eval);
        noise.set_word_pos(0);
        components.set_stream(Substream::Eval.stream_id() + 100);
        Self { noise, components }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::training(seed)
    }
}
