//! Counter-addressable Gaussian sampling.
//!
//! Each path owns a ChaCha stream keyed by `(seed, path)`; positions within
//! the stream advance in `(step, coordinate)` order. The sample at any
//! `(seed, path, step, coordinate)` is therefore fixed independently of how
//! work is partitioned across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// ChaCha generator positioned at the start of the stream for `path`.
pub fn path_stream(seed: u64, path: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path);
    rng
}

/// Standard normal draw by inverse CDF of a full-precision uniform.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u = uniform_open01(rng.next_u64());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(u)
}

/// Maps a u64 to the open interval (0, 1), never returning 0 or 1.
///
/// Forcing the low bit yields odd multiples of 2^-53, all exactly
/// representable and strictly inside the interval.
fn uniform_open01(x: u64) -> f64 {
    (((x >> 11) | 1) as f64) * (1.0 / 9007199254740992.0)
}
