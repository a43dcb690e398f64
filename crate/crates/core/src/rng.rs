//! Deterministic pseudo-random streams.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter
//! advanced by the golden-ratio increment `0x9E3779B97F4A7C15`, with the
//! output passed through two xor-shift/multiply finalization rounds. The
//! algorithm is spelled out here so an implementation in another language
//! can reproduce the behavior in spirit; identical seeds yield bit-identical
//! streams within this crate.

/// Deterministic random stream seeded from a single `u64`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    state: u64,
    /// Cached second output of the Box-Muller transform.
    spare_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            state: seed,
            spare_normal: None,
        }
    }

    /// Derives an independent child stream from a root seed, a textual tag
    /// and a numeric salt. The tag is folded in with FNV-1a so distinct
    /// purposes ("data", "init", ...) never share a stream.
    pub fn derived(root: u64, tag: &str, salt: u64) -> Self {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        let seed = mix(root ^ h ^ salt.wrapping_mul(GOLDEN));
        SeededRng::new(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the multiply-shift reduction.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty range");
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal draw (Box-Muller, with the spare output cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // Resample to keep the logarithm away from zero.
        let mut u1 = self.next_f64();
        while u1 <= 1e-300 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Random point on the probability simplex over `n` outcomes
    /// (exponential spacings, normalized).
    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        assert!(n > 0);
        let mut p: Vec<f64> = (0..n)
            .map(|_| {
                let mut u = self.next_f64();
                while u <= 1e-300 {
                    u = self.next_f64();
                }
                -u.ln()
            })
            .collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        p
    }
}
