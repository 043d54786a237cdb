//! Portable, seed-deterministic random numbers: xoshiro256** seeded through
//! splitmix64, with stream splitting keyed by arbitrary integer tuples.
//!
//! Generated panels must be bit-identical across runs and platforms, so the
//! generator algorithm, the seeding chain, and the normal-draw transform are
//! all fixed here and never delegated to a platform RNG.

#[derive(Debug, Clone)]
pub struct Xoshiro256 {
    s: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Xoshiro256 {
    pub fn seeded(seed: u64) -> Self {
        let mut sm = seed;
        Xoshiro256 {
            s: [
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
            ],
        }
    }

    /// Independent stream for a keyed draw site: the seed is mixed with each
    /// key component through the splitmix64 chain, so streams keyed by
    /// (seed, unit, period) are order-independent and reproducible.
    pub fn stream(seed: u64, keys: &[u64]) -> Self {
        let mut sm = seed;
        let mut acc = splitmix64(&mut sm);
        for k in keys {
            let mut mix = acc ^ k.wrapping_mul(0x9E3779B97F4A7C15);
            acc = splitmix64(&mut mix);
        }
        Xoshiro256::seeded(acc)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
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
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: u64) -> u64 {
        // Modulo bias is negligible for the panel sizes used here.
        self.next_u64() % n
    }

    /// Standard normal via Box-Muller (deterministic, platform-stable).
    pub fn next_normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        if u1 <= f64::MIN_POSITIVE {
            u1 = f64::MIN_POSITIVE;
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
