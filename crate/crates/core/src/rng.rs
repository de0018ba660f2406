//! Self-contained seeded random number generation.
//!
//! Everything random in the toolkit flows through [`SeedRng`] (xoshiro256**
//! seeded via splitmix64) so that a run is reproducible bit-for-bit from a
//! single integer seed. Per-purpose streams are derived statelessly from the
//! master seed plus a tag list, which makes batch sampling independent of
//! worker scheduling and lets checkpoint resume land on the exact stream a
//! continuous run would have used.

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic xoshiro256** generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRng {
    s: [u64; 4],
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        // xoshiro must not start from the all-zero state
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        SeedRng { s }
    }

    /// Derive an independent stream from a base seed and a tag path.
    pub fn derive(base_seed: u64, tags: &[u64]) -> Self {
        let mut sm = base_seed ^ 0x6a09_e667_f3bc_c909;
        let mut acc = splitmix64(&mut sm);
        for &t in tags {
            let mut tm = acc ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            acc = splitmix64(&mut tm);
        }
        SeedRng::new(acc)
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

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller. Consumes two words per sample; no
    /// cached spare, so the state serializes as just the four lanes.
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    /// Uniform integer in [0, n) by rejection sampling.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return (x % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state(s: [u64; 4]) -> Self {
        SeedRng { s }
    }
}

/// Master randomness record for a run: the seed plus the live generator.
///
/// Identical seeds produce identical sample sequences within a process, and
/// the whole state round-trips through checkpoints as five integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomState {
    seed: u64,
    rng: SeedRng,
}

impl RandomState {
    pub fn new(seed: u64) -> Self {
        RandomState {
            seed,
            rng: SeedRng::new(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut SeedRng {
        &mut self.rng
    }

    /// Stateless per-purpose stream: does not advance the master generator.
    pub fn stream(&self, tags: &[u64]) -> SeedRng {
        SeedRng::derive(self.seed, tags)
    }

    pub fn snapshot(&self) -> (u64, [u64; 4]) {
        (self.seed, self.rng.state())
    }

    pub fn restore(seed: u64, state: [u64; 4]) -> Self {
        RandomState {
            seed,
            rng: SeedRng::from_state(state),
        }
    }
}
