//! Randomness sources.
//!
//! Everything that draws randomness takes a [`RandomSource`], which is either
//! OS entropy or a seeded ChaCha12 stream. Seeded mode is bit-identical
//! across runs and platforms, which is what makes estimator runs, fleet
//! transcripts, and CLI artifacts reproducible under `--seed`.
//!
//! Parallel estimators never share one source. A worker covering batch `i`
//! gets `source.fork(i)`, which reseeds with `seed XOR i`, so results do not
//! depend on how batches are scheduled.

use crate::bits::Bits;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub enum RandomSource {
    Os(OsRng),
    Seeded { seed: u64, rng: Box<ChaCha12Rng> },
}

impl std::fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RandomSource::Os(_) => write!(f, "RandomSource::Os"),
            RandomSource::Seeded { seed, .. } => {
                write!(f, "RandomSource::Seeded({seed})")
            }
        }
    }
}

impl RandomSource {
    pub fn from_os() -> Self {
        RandomSource::Os(OsRng)
    }

    pub fn seeded(seed: u64) -> Self {
        RandomSource::Seeded {
            seed,
            rng: Box::new(ChaCha12Rng::seed_from_u64(seed)),
        }
    }

    /// Seeded sources honor `--seed`; OS sources report nothing.
    pub fn seed(&self) -> Option<u64> {
        match self {
            RandomSource::Os(_) => None,
            RandomSource::Seeded { seed, .. } => Some(*seed),
        }
    }

    /// Independent source for parallel worker `index`: seed XOR index.
    /// Forking an OS source gives a fresh OS source.
    pub fn fork(&self, index: u64) -> Self {
        match self {
            RandomSource::Os(_) => RandomSource::from_os(),
            RandomSource::Seeded { seed, .. } => RandomSource::seeded(seed ^ index),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        match self {
            RandomSource::Os(rng) => rng.next_u64(),
            RandomSource::Seeded { rng, .. } => rng.next_u64(),
        }
    }

    /// Uniform draw from `0..n` by rejection; unbiased for every `n >= 1`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "empty range");
        if n == 1 {
            return 0;
        }
        if n.is_power_of_two() {
            return self.next_u64() & (n - 1);
        }
        // Largest multiple of n that fits in a u64; draws past it would bias.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// True with probability `p` (53-bit resolution).
    pub fn chance(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < p
    }

    /// A fresh bit string of `len` bits, each one with probability
    /// `one_prob`. The fair case fills whole words at a time.
    pub fn bits(&mut self, len: u64, one_prob: f64) -> Bits {
        let mut out = Bits::zeros(len);
        if one_prob == 0.5 {
            let bytes = out.as_bytes().len();
            let mut packed = vec![0u8; bytes];
            let mut i = 0;
            while i + 8 <= bytes {
                packed[i..i + 8].copy_from_slice(&self.next_u64().to_le_bytes());
                i += 8;
            }
            if i < bytes {
                let w = self.next_u64().to_le_bytes();
                packed[i..].copy_from_slice(&w[..bytes - i]);
            }
            let pad = (len % 8) as u32;
            if pad != 0 {
                let last = packed.len() - 1;
                packed[last] &= (1u8 << pad) - 1;
            }
            return Bits::from_bytes(packed, len).expect("pad bits masked");
        }
        for i in 0..len {
            if self.chance(one_prob) {
                out.set(i, true);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_streams_are_reproducible() {
        let mut a = RandomSource::seeded(7);
        let mut b = RandomSource::seeded(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RandomSource::seeded(8);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn fork_applies_seed_xor_index() {
        let master = RandomSource::seeded(0xdead_beef);
        let mut forked = master.fork(3);
        let mut direct = RandomSource::seeded(0xdead_beef ^ 3);
        for _ in 0..10 {
            assert_eq!(forked.next_u64(), direct.next_u64());
        }
        assert_eq!(master.fork(0).seed(), Some(0xdead_beef));
    }

    #[test]
    fn below_stays_in_range_and_covers_it() {
        let mut rng = RandomSource::seeded(1);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = rng.below(7);
            assert!(v < 7);
            seen[v as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(rng.below(1), 0);
    }

    #[test]
    fn below_is_roughly_uniform() {
        // 7 buckets, 70_000 draws: chi-square df=6, 99.9% critical 22.46.
        let mut rng = RandomSource::seeded(2);
        let mut counts = [0u64; 7];
        let trials = 70_000u64;
        for _ in 0..trials {
            counts[rng.below(7) as usize] += 1;
        }
        let expect = trials as f64 / 7.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        assert!(chi2 < 22.46, "chi-square {chi2} too large");
    }

    #[test]
    fn bits_fair_path_matches_length_and_pad() {
        let mut rng = RandomSource::seeded(3);
        for len in [1u64, 7, 8, 9, 63, 64, 65, 1000] {
            let b = rng.bits(len, 0.5);
            assert_eq!(b.len(), len);
            // reparse enforces the zero-pad invariant
            assert!(Bits::from_bytes(b.as_bytes().to_vec(), len).is_ok());
        }
    }

    #[test]
    fn bits_extreme_probabilities() {
        let mut rng = RandomSource::seeded(4);
        assert_eq!(rng.bits(500, 0.0).count_ones(), 0);
        assert_eq!(rng.bits(500, 1.0).count_ones(), 500);
    }

    #[test]
    fn bits_biased_fraction_tracks_probability() {
        let mut rng = RandomSource::seeded(5);
        let n = 200_000u64;
        for p in [0.1f64, 0.3] {
            let ones = rng.bits(n, p).count_ones() as f64;
            let sigma = (p * (1.0 - p) * n as f64).sqrt();
            let z = (ones - p * n as f64) / sigma;
            assert!(z.abs() < 4.0, "p={p}: z={z}");
        }
    }
}
