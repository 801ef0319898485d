//! Counter-based random streams.
//!
//! Every stream is keyed by `(master, tag, replicate)`; the key is produced by
//! folding the inputs through the SplitMix64 finalizer
//!
//! ```text
//! mix64(z) = let z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!            let z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//!            z ^ (z >> 31)
//! key = mix64(master ^ GOLDEN)
//! for each 8-byte little-endian word w of the zero-padded tag bytes:
//!     key = mix64(key ^ w)
//! key = mix64(key ^ tag.len())
//! key = mix64(key ^ replicate)
//! ```
//!
//! with `GOLDEN = 0x9E3779B97F4A7C15` and wrapping arithmetic. Output `i`
//! (counting from zero) of a stream is `mix64(key + (i + 1) * GOLDEN)`.
//! Uniform doubles take the top 53 bits; normals use Box–Muller on
//! `(1 - u1, u2)` and return the cosine branch first, then the sine branch.

use serde::{Deserialize, Serialize};

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed from which every stream in a run is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedSpec {
    pub master: u64,
}

impl SeedSpec {
    pub const fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn stream(&self, tag: &str, replicate: u64) -> Stream {
        derive_stream(*self, tag, replicate)
    }

    /// A new master seed for a sub-experiment, reproducible from the parent.
    pub fn child(&self, tag: &str, replicate: u64) -> SeedSpec {
        SeedSpec::new(stream_key(self.master, tag, replicate))
    }
}

impl From<u64> for SeedSpec {
    fn from(master: u64) -> Self {
        Self { master }
    }
}

fn stream_key(master: u64, tag: &str, replicate: u64) -> u64 {
    let mut key = mix64(master ^ GOLDEN);
    for chunk in tag.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        key = mix64(key ^ u64::from_le_bytes(word));
    }
    key = mix64(key ^ tag.len() as u64);
    mix64(key ^ replicate)
}

pub fn derive_stream(seed: SeedSpec, tag: &str, replicate: u64) -> Stream {
    Stream {
        key: stream_key(seed.master, tag, replicate),
        counter: 0,
        spare_normal: None,
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..bound` via the 128-bit multiply-shift map.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, len: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..len).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_derivation_is_identical() {
        let mut a = derive_stream(SeedSpec::new(1), "sim", 0);
        let mut b = derive_stream(SeedSpec::new(1), "sim", 0);
        for _ in 0..4 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    // Hand evaluation of the documented mixer for the three keys.
    fn reference_first_output(master: u64, tag: &[u8], replicate: u64) -> u64 {
        let mut k = mix64(master ^ GOLDEN);
        let mut w = [0u8; 8];
        w[..tag.len()].copy_from_slice(tag);
        k = mix64(k ^ u64::from_le_bytes(w));
        k = mix64(k ^ tag.len() as u64);
        k = mix64(k ^ replicate);
        mix64(k.wrapping_add(GOLDEN))
    }

    #[test]
    fn first_outputs_follow_documented_mixer() {
        let base = reference_first_output(1, b"sim", 0);
        let other_rep = reference_first_output(1, b"sim", 1);
        let other_master = reference_first_output(2, b"sim", 0);
        assert_ne!(base, other_rep);
        assert_ne!(base, other_master);
        assert_eq!(derive_stream(SeedSpec::new(1), "sim", 0).next_u64(), base);
        assert_eq!(derive_stream(SeedSpec::new(1), "sim", 1).next_u64(), other_rep);
        assert_eq!(derive_stream(SeedSpec::new(2), "sim", 0).next_u64(), other_master);
    }

    #[test]
    fn tags_are_distinguished() {
        let a = derive_stream(SeedSpec::new(7), "paths", 3).next_u64();
        let b = derive_stream(SeedSpec::new(7), "noise", 3).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut s = derive_stream(SeedSpec::new(11), "moments", 0);
        let n = 200_000;
        let (mut su, mut sz, mut szz) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
            su += u;
            let z = s.standard_normal();
            sz += z;
            szz += z * z;
        }
        let n = n as f64;
        assert!((su / n - 0.5).abs() < 0.005);
        assert!((sz / n).abs() < 0.01);
        assert!((szz / n - 1.0).abs() < 0.02);
    }

    #[test]
    fn permutation_is_valid() {
        let mut s = derive_stream(SeedSpec::new(3), "perm", 0);
        let mut p = s.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
