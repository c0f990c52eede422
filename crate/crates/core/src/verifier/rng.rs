//! Small deterministic generator for the verification battery.
//!
//! A 64-bit linear congruential generator with Knuth's MMIX constants:
//! `x' = 6364136223846793005 * x + 1442695040888963407 (mod 2^64)`.
//! Uniform floats use the top 53 bits of the state. The state after seeding
//! is the seed itself, and the first output comes from one step past it.
//! Output is fixed by this definition alone, so batteries reproduce across
//! platforms and library versions.

pub const MULTIPLIER: u64 = 6364136223846793005;
pub const INCREMENT: u64 = 1442695040888963407;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `lo..=hi`, from the high bits.
    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + ((self.next_u64() >> 32) % span)
    }
}
