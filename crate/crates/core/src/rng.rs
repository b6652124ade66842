//! Deterministic, cross-platform random number generation.
//!
//! Every stochastic piece of the system (sensor noise, dropout, drop decisions
//! on the simulated channel) draws from PCG32 (XSH-RR 64/32, the reference
//! constants) seeded through SplitMix64. Streams are split by mixing a label
//! into the PCG sequence selector, so per-robot / per-sensor / per-frame
//! streams are independent and replayable from a single mission seed on any
//! platform: the generators use only integer arithmetic and the float
//! conversions below are bit-exact.

/// SplitMix64 step; used for seeding and label mixing.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// PCG32: 64-bit state, 63-bit stream selector, 32-bit XSH-RR output.
#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
    gauss_spare: Option<f64>,
}

const PCG_MULT: u64 = 6_364_136_223_846_793_005;

impl Pcg32 {
    /// Reference initialization: `seed` sets the starting point within the
    /// stream selected by `seq`.
    pub fn new(seed: u64, seq: u64) -> Self {
        let inc = (seq << 1) | 1;
        let mut rng = Pcg32 {
            state: 0,
            inc,
            gauss_spare: None,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    /// Derive an independent stream from a root seed and a label. Both the
    /// state seed and the sequence selector are mixed through SplitMix64 so
    /// that nearby labels do not produce correlated streams.
    pub fn stream(root_seed: u64, label: u64) -> Self {
        let mut s = root_seed ^ label.wrapping_mul(0xA24B_AED4_963E_E407);
        let seed = splitmix64(&mut s);
        let seq = splitmix64(&mut s);
        Pcg32::new(seed, seq)
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// True with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller; the second deviate is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(spare) = self.gauss_spare.take() {
            return spare;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(2.0 * core::f64::consts::PI * u2);
        self.gauss_spare = Some(radius * s);
        radius * c
    }

    /// Normal with the given standard deviation.
    pub fn gaussian_scaled(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        self.gaussian() * sigma
    }
}

/// FNV-1a over a byte string; used to turn human-readable stream names into
/// labels ("usv/lidar", "auv1/sonar", ...).
pub fn label(name: &str) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Label for a (name, index) pair, e.g. per-frame streams.
pub fn label_indexed(name: &str, index: u64) -> u64 {
    label(name) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
