//! Counter-based deterministic random numbers.
//!
//! [`CounterRng`] produces the `i`-th output as `mix64(key + (i + 1) * GOLDEN_GAMMA)`,
//! where `mix64` is the SplitMix64 finalizer. The stream is a pure function of
//! `(key, counter)`, so any position can be recomputed without replaying the
//! prefix, and the output is identical on every platform.
//!
//! Seeds for individual units of work (a trial, a variant, an image) are
//! derived with [`SeedKey`], which hashes a sequence of labelled parts with
//! 64-bit FNV-1a and finishes with `mix64`.

/// Weyl increment of SplitMix64, `floor(2^64 / phi)`.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// First multiplier of the SplitMix64 finalizer.
pub const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
/// Second multiplier of the SplitMix64 finalizer.
pub const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;
/// FNV-1a 64-bit offset basis.
pub const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
/// FNV-1a 64-bit prime.
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub const fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Output at an absolute stream position, independent of the current counter.
    #[inline]
    pub fn at(key: u64, index: u64) -> u64 {
        mix64(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = Self::at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]` (the upper end is reachable only through rounding).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `[0, bound)` (Lemire's widening multiply with rejection).
    ///
    /// # Panics
    ///
    /// Panics if `bound` is zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be non-zero");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Standard normal draw (Box-Muller, one value per two uniforms).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Builder for derived seeds: `SeedKey::new(base).str("task").u64(3).finish()`.
#[derive(Debug, Clone)]
pub struct SeedKey {
    state: u64,
}

impl SeedKey {
    pub fn new(base: u64) -> Self {
        let mut key = Self { state: FNV_OFFSET };
        key.absorb(&base.to_le_bytes());
        key
    }

    fn absorb(&mut self, bytes: &[u8]) {
        // Length prefix keeps ("ab","c") distinct from ("a","bc").
        for b in (bytes.len() as u64).to_le_bytes().iter().chain(bytes) {
            self.state ^= u64::from(*b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn str(mut self, part: &str) -> Self {
        self.absorb(part.as_bytes());
        self
    }

    pub fn u64(mut self, part: u64) -> Self {
        self.absorb(&part.to_le_bytes());
        self
    }

    pub fn finish(&self) -> u64 {
        mix64(self.state)
    }

    pub fn rng(&self) -> CounterRng {
        CounterRng::new(self.finish())
    }
}
