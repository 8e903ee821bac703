use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Real;

/// Seeded, splittable random stream.
///
/// Backed by a counter-based ChaCha generator: the `(seed, stream_id)` pair
/// selects the key and nonce, so distinct stream ids never overlap and a
/// cloned stream replays the exact same output.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position of the internal counter, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Child seed for `tag`, a pure function of `(seed, stream_id, tag)`.
    /// Does not advance this stream.
    pub fn child_seed(&self, tag: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(self.stream_id ^ splitmix64(tag)))
    }

    /// Independent stream for `tag`, untouched by draws made on `self`.
    pub fn derive(&self, tag: u64) -> RandomStream {
        RandomStream::new(self.child_seed(tag), tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform on [0, 1).
    pub fn uniform<T: Real>(&mut self) -> T {
        T::lit(self.rng.random::<f64>())
    }

    pub fn normal<T: Real>(&mut self) -> T {
        T::lit(self.rng.sample::<f64, _>(StandardNormal))
    }

    pub fn fill_normal<T: Real>(&mut self, out: &mut [T]) {
        for v in out {
            *v = self.normal();
        }
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.rng);
    }
}

/// `n` i.i.d. standard-normal variates.
pub fn draw_normal<T: Real>(stream: &mut RandomStream, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    stream.fill_normal(&mut out);
    out
}
