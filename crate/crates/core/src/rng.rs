//! Deterministic, platform-independent random number generation.
//!
//! Every random draw in the simulator comes from a [`Pcg`]-free, hand-pinned
//! generator stack so that a run is bit-identical across platforms and
//! toolchain versions:
//!
//! * [`split_mix64`] — the SplitMix64 finalizer (Steele, Lea & Flood 2014),
//!   used to derive substream seeds from `(seed, tag, indices...)` tuples.
//! * [`Xoshiro256`] — xoshiro256++ (Blackman & Vigna 2019), the stream
//!   generator behind every uniform draw.
//! * Normal deviates via the Box-Muller transform, log-normals by
//!   exponentiating them.
//!
//! Substream derivation means stream generation, latency sampling and device
//! sampling never share state: each `(seed, purpose, device, round)` tuple
//! owns an independent generator, so adding draws to one subsystem cannot
//! perturb another.

/// SplitMix64 state update + output mix. Bijective on u64.
pub fn split_mix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a base seed with domain-separating parts into a derived seed; the
/// fold is order-sensitive, so `(a, b)` and `(b, a)` land on different
/// substreams.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = seed;
    for &p in parts {
        let mut st = acc ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        acc = split_mix64(&mut st);
    }
    acc
}

/// xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

impl Xoshiro256 {
    /// Seed the four state words from a single u64 via SplitMix64, as the
    /// xoshiro authors recommend.
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            split_mix64(&mut sm),
            split_mix64(&mut sm),
            split_mix64(&mut sm),
            split_mix64(&mut sm),
        ];
        Xoshiro256 { s }
    }

    /// Derive an independent substream from a base seed and a list of
    /// domain-separating parts (a tag plus indices such as device or round).
    pub fn substream(seed: u64, parts: &[u64]) -> Self {
        Self::seed_from_u64(derive_seed(seed, parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [low, high).
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Uniform integer in [0, bound) by rejection, avoiding modulo bias.
    pub fn next_bounded(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Standard normal deviate via Box-Muller (uses two uniforms per call).
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1] so ln(u1) is finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Log-normal with the given median and shape sigma (median = e^mu).
    pub fn next_lognormal(&mut self, median: f64, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return median;
        }
        median * (sigma * self.next_normal()).exp()
    }

    /// Sample `count` distinct indices from [0, population), in sorted order.
    /// Partial Fisher-Yates over an index vector.
    pub fn sample_without_replacement(&mut self, population: usize, count: usize) -> Vec<usize> {
        assert!(count <= population);
        let mut idx: Vec<usize> = (0..population).collect();
        for i in 0..count {
            let j = i + self.next_bounded((population - i) as u64) as usize;
            idx.swap(i, j);
        }
        let mut picked = idx[..count].to_vec();
        picked.sort_unstable();
        picked
    }
}

/// Well-known tags used for substream domain separation.
pub mod tag {
    pub const STREAM: u64 = 0x01;
    pub const CORRUPT: u64 = 0x02;
    pub const MIX: u64 = 0x03;
    pub const TEST_SPLIT: u64 = 0x04;
    pub const LATENCY: u64 = 0x05;
    pub const SAMPLING: u64 = 0x06;
    pub const DRIFT_ASSIGN: u64 = 0x07;
    pub const INIT_MODEL: u64 = 0x08;
    pub const CONCEPT: u64 = 0x09;
    pub const LABEL_NOISE: u64 = 0x0A;
}
