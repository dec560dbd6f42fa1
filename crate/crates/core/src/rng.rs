//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, domain, replica, lane, counter)`,
//! so results never depend on which thread runs a replica or in what order
//! replicas finish. A lane is usually a particle index; ensembles and matrix
//! simulations use their own domains so they never alias particle noise.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Separates independent uses of one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    ParticleNoise = 1,
    Ensemble = 2,
    MatrixNoise = 3,
    InitialBand = 4,
    Gaussian = 5,
    Bootstrap = 6,
    Auxiliary = 7,
}

/// Identifies one replica of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplicaKey {
    pub seed: u64,
    pub replica: u64,
}

impl ReplicaKey {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self { seed, replica }
    }

    pub fn stream(&self, domain: Domain, lane: u64) -> CounterRng {
        CounterRng::new(self.seed, domain, self.replica, lane)
    }

    /// A fresh 64-bit seed for nested use (e.g. an auxiliary experiment).
    pub fn derive_seed(&self, salt: u64) -> u64 {
        mix64(mix64(self.seed ^ salt.wrapping_mul(GOLDEN)) ^ self.replica)
    }
}

impl From<u64> for ReplicaKey {
    fn from(seed: u64) -> Self {
        Self { seed, replica: 0 }
    }
}

/// Keyed hash of a running counter.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, domain: Domain, replica: u64, lane: u64) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        key = mix64(key ^ (domain as u64).wrapping_mul(GOLDEN));
        key = mix64(key ^ replica.wrapping_mul(0xd1b5_4a32_d192_ed03));
        key = mix64(key ^ lane.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7));
        Self { key, counter: 0 }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
