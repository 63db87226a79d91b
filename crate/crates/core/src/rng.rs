//! Hierarchical seeding.
//!
//! A run owns one root seed. Every consumer (context sampling, policy
//! sampling, validation, ...) derives its own stream from the root and a
//! purpose label, so adding a new consumer never shifts the draws seen by
//! existing ones.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A node in the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    id: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree {
            id: splitmix64(root),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Derives a child node for `purpose`, optionally indexed (iteration, episode, ...).
    pub fn child(&self, purpose: &str, index: u64) -> SeedTree {
        SeedTree {
            id: splitmix64(self.id ^ splitmix64(fnv1a(purpose) ^ splitmix64(index))),
        }
    }

    pub fn stream(&self, purpose: &str) -> RngStream {
        RngStream::from_id(self.child(purpose, 0).id)
    }

    pub fn indexed_stream(&self, purpose: &str, index: u64) -> RngStream {
        RngStream::from_id(self.child(purpose, index).id)
    }
}

/// A seeded random stream that remembers its identifier.
#[derive(Debug, Clone)]
pub struct RngStream {
    id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn from_id(id: u64) -> Self {
        RngStream {
            id,
            rng: ChaCha8Rng::seed_from_u64(id),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform index in `0..n`. Panics on `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Draws from a categorical distribution by inverse CDF.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding slack: land on the last index with positive mass
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<f64> = {
            let mut s = SeedTree::new(7).stream("policy");
            (0..16).map(|_| s.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut s = SeedTree::new(7).stream("policy");
            (0..16).map(|_| s.uniform()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn purposes_are_independent() {
        let t = SeedTree::new(7);
        assert_ne!(t.stream("policy").id(), t.stream("context").id());
        assert_ne!(t.indexed_stream("ep", 1).id(), t.indexed_stream("ep", 2).id());
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut s = SeedTree::new(1).stream("x");
        for _ in 0..1000 {
            assert_eq!(s.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
