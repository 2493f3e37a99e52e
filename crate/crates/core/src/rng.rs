//! Deterministic random streams.
//!
//! Every stochastic component derives its own ChaCha stream from a root
//! seed, a string tag, and integer indices. Concurrent work therefore never
//! shares an rng handle, and re-running a configuration reproduces every
//! draw regardless of thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives an independent stream from `(seed, tag, indices)`.
pub fn derive(seed: u64, tag: &str, indices: &[u64]) -> ChaCha12Rng {
    let th = fnv1a(tag);
    let mut acc = splitmix(seed ^ th);
    for (i, &ix) in indices.iter().enumerate() {
        acc = splitmix(acc ^ splitmix(ix.wrapping_add(i as u64 + 1)));
    }
    let words = [splitmix(seed), th, acc, splitmix(acc)];
    let mut bytes = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        bytes[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha12Rng::from_seed(bytes)
}

/// One standard-normal draw.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `n` standard-normal draws in order.
pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
