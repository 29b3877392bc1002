//! Deterministic, portable random number generation.
//!
//! Every stochastic operation in this crate draws from the fixed stream
//! defined here, so runs are bit-reproducible across platforms for a given
//! seed. The stream is:
//!
//! 1. `SplitMix64(seed)`: `state += 0x9E3779B97F4A7C15`;
//!    `z = state; z = (z ^ (z>>30)) * 0xBF58476D1CE4E5B9;`
//!    `z = (z ^ (z>>27)) * 0x94D049BB133111EB; z ^ (z>>31)`.
//! 2. xoshiro256++ state = four successive SplitMix64 outputs.
//! 3. `next_u64` = one xoshiro256++ step.
//! 4. `next_f64` = `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`.
//! 5. Standard normals come in Box-Muller pairs: `u1 = 1 - next_f64`
//!    (in `(0, 1]`), `u2 = next_f64`, `r = sqrt(-2 ln u1)`;
//!    `r*cos(2 pi u2)` is emitted first, `r*sin(2 pi u2)` is cached and
//!    emitted next.
//!
//! Parallel work items (sweep cells, trials) derive their own generator via
//! [`derive_seed`], which keys the SplitMix64 finalizer on
//! `seed + (stream+1) * 0x9E3779B97F4A7C15`, so results are independent of
//! evaluation order.

use std::f64::consts::PI;

const GAMMA: u64 = 0x9E3779B97F4A7C15;

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for the work item at `stream` within a run keyed by `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix_finalize(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// xoshiro256++ generator with a one-slot Box-Muller cache.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            state = state.wrapping_add(GAMMA);
            *slot = splitmix_finalize(state);
        }
        Rng {
            s,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform over `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        // modulo bias is < 2^-40 for the n used here (n < 2^24)
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw (Box-Muller pair stream, see module docs).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (2.0 * PI * u2).sin_cos();
        self.spare_normal = Some(r * sin);
        r * cos
    }

    /// Normal with the given mean and standard deviation, truncated to
    /// `[0, pi]` by rejection. Truncation (rather than clamping) keeps the
    /// angle distribution atom-free at the endpoints.
    pub fn angle(&mut self, mu: f64, sigma: f64) -> f64 {
        loop {
            let x = mu + sigma * self.normal();
            if (0.0..=PI).contains(&x) {
                return x;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
