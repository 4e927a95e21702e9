//! Reproducible seeding and the noise source for synthetic activations.
//!
//! The synthetic generator must be reimplementable bit-for-bit in other
//! languages, so it uses a fully specified pipeline instead of a library
//! RNG:
//!
//! - **SplitMix64**: `state += 0x9E3779B97F4A7C15`; then
//!   `z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`
//!   (wrapping arithmetic).
//! - **Uniform**: `(next() >> 11) as f64 * 2^-53`, giving `[0, 1)`.
//! - **Normal**: Box-Muller on two uniforms `u1, u2` with `u1` replaced by
//!   `1 - u1` so the logarithm is finite: `r = sqrt(-2 ln(1 - u1))`,
//!   outputs `r cos(2 pi u2)` then `r sin(2 pi u2)`.
//! - **Seed mixing**: [`mix_seed`] folds extra words into a seed by running
//!   one SplitMix64 step per word on `state ^ word`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        finalize(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normal stream via Box-Muller over [`SplitMix64`].
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> NormalStream {
        NormalStream {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_f64();
        let u2 = self.rng.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Derives a child seed from `seed` and a list of words.
pub fn mix_seed(seed: u64, words: &[u64]) -> u64 {
    let mut state = finalize(seed.wrapping_add(GAMMA));
    for &w in words {
        state = finalize((state ^ w).wrapping_add(GAMMA));
    }
    state
}

/// FNV-1a 64-bit, for stable content hashes in result files.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
