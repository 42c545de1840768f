//! Seeded randomness with a fixed algorithm.
//!
//! Scenes are drawn from PCG-64 MCG (`rand_pcg::Pcg64Mcg`: 128-bit state,
//! multiplier `0x2360ed051fc65da44385df649fccf645`, XSL-RR output) seeded
//! through `SeedableRng::seed_from_u64`. Floats are built from the top 53
//! bits of each output, so a seed maps to the same values on every platform.
//!
//! Child seeds are derived by hashing: the first 8 bytes (little endian) of
//! SHA-256 over the little-endian encoding of every part.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use sha2::{Digest, Sha256};

use crate::scene::Span;

pub struct SceneRng(Pcg64Mcg);

impl SceneRng {
    pub fn new(seed: u64) -> Self {
        SceneRng(Pcg64Mcg::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[min, max)`; exactly `min` when the span is degenerate.
    pub fn uniform(&mut self, span: Span) -> f64 {
        let u = self.unit();
        if span.min == span.max {
            span.min
        } else {
            span.min + u * (span.max - span.min)
        }
    }

    /// Uniform integer in `[min, max]`.
    pub fn int_inclusive(&mut self, min: u32, max: u32) -> u32 {
        let n = (max - min) as u64 + 1;
        min + (self.next_u64() % n) as u32
    }

    pub fn index(&mut self, len: usize) -> usize {
        (self.next_u64() % len as u64) as usize
    }
}

/// One component of a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    U64(u64),
    Str(&'a str),
}

pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        match p {
            SeedPart::U64(v) => h.update(v.to_le_bytes()),
            SeedPart::Str(s) => {
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
