//! Counter-based noise streams.
//!
//! Every exogenous draw is addressed by `(master seed, individual, node)`.
//! The node index already encodes the time point, so two draws with the same
//! address are identical no matter which thread produced them or in which
//! order individuals were visited.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCALE: f64 = 1.0 / (1u64 << 53) as f64;

/// Deterministic source of exogenous uniforms.
#[derive(Clone)]
pub struct NoiseSource {
    master_seed: u64,
    base: ChaCha8Rng,
}

impl std::fmt::Debug for NoiseSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseSource")
            .field("master_seed", &self.master_seed)
            .finish()
    }
}

impl NoiseSource {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            base: ChaCha8Rng::seed_from_u64(master_seed),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Fill `out[k]` with the uniform addressed by `(individual, node k)`.
    pub fn fill(&self, individual: u64, out: &mut [f64]) {
        let mut rng = self.base.clone();
        rng.set_stream(individual);
        rng.set_word_pos(0);
        for slot in out.iter_mut() {
            *slot = to_unit(rng.next_u64());
        }
    }

    /// Single uniform for `(individual, node)`; agrees with [`NoiseSource::fill`].
    pub fn uniform(&self, individual: u64, node: usize) -> f64 {
        let mut rng = self.base.clone();
        rng.set_stream(individual);
        rng.set_word_pos(2 * node as u128);
        to_unit(rng.next_u64())
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * SCALE
}

/// Derive an independent seed for a named sub-computation.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = splitmix(seed ^ splitmix(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    z = splitmix(z ^ index.wrapping_add(0xD1B5_4A32_D192_ED03));
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Namespaces for [`derive_seed`].
pub mod tags {
    pub const POLICY_FIT: u64 = 1;
    pub const ESTIMAND: u64 = 2;
    pub const OBSERVATIONAL: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const ARM: u64 = 5;
    pub const INTEGRATION: u64 = 6;
}
