use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::{CVector, Cplx};
use crate::error::{Error, Result};

/// Seeded ChaCha8 stream.
///
/// `(seed, stream_id)` pins the whole sequence. Child streams come from
/// [`Prng::derive`], which hashes the parent stream id with a child index, so a
/// Monte-Carlo trial keyed by `(seed, point, trial)` draws the same numbers no
/// matter which worker runs it.
#[derive(Clone, Debug)]
pub struct Prng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator on an independent substream.
    pub fn derive(&self, child: u64) -> Prng {
        Prng::new(
            self.seed,
            splitmix64(self.stream_id ^ splitmix64(child.wrapping_add(0x632b_e59b_d9b4_e019))),
        )
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// One CN(0, 1) draw: independent real and imaginary parts of variance ½.
    pub fn cscg(&mut self) -> Cplx {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Cplx::new(self.standard_normal() * s, self.standard_normal() * s)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Prng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n` i.i.d. CN(0, 1) samples.
pub fn sample_cscg(rng: &mut Prng, n: usize) -> Result<CVector> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Ok(CVector::from_fn(n, |_| rng.cscg()))
}
