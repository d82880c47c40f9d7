//! Seeding contract.
//!
//! Every random stream in the crate is identified by a path of 64-bit tags
//! below a master seed and is derived with the SplitMix64 finalizer:
//!
//! ```text
//! derive(parent, tag) = mix(parent ^ mix(tag + GOLDEN))
//! replication r       = derive(master, r)
//! system stream       = derive(derive(replication, 0), ROLE_SYSTEM)
//! particle i, role    = derive(derive(replication, i + 1), role)
//! ```
//!
//! The derived 64-bit value seeds a `Pcg64Mcg`. Streams depend only on their
//! tag path, so particles can be advanced in any order, and replications can
//! be scheduled on any number of threads, without changing a single draw.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Generator used for every stream.
pub type SimRng = Pcg64Mcg;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Role tags for the per-particle and per-system substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    /// Proposal times and particle selection.
    System = 1,
    /// Brownian increments driving the factor.
    Brownian = 2,
    /// Uniforms deciding acceptance of proposed jumps.
    Decision = 3,
    /// Initial-law sampling.
    Initial = 4,
}

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `parent` under `tag`.
#[inline]
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    mix64(parent ^ mix64(tag.wrapping_add(GOLDEN)))
}

/// Seed of replication `rep` under a master seed.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    derive_seed(master, rep)
}

/// Generator for an arbitrary seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    let hi = mix64(seed) as u128;
    let lo = mix64(seed ^ GOLDEN) as u128;
    Pcg64Mcg::from_seed(((hi << 64) | lo).to_le_bytes())
}

/// The system-wide stream of a replication.
pub fn system_stream(rep_seed: u64) -> SimRng {
    rng_from_seed(derive_seed(derive_seed(rep_seed, 0), StreamRole::System as u64))
}

/// Substream `role` of particle (or path) `index` within a replication.
pub fn particle_stream(rep_seed: u64, index: usize, role: StreamRole) -> SimRng {
    rng_from_seed(derive_seed(derive_seed(rep_seed, index as u64 + 1), role as u64))
}

/// Uniform draw on `(0, 1]`, safe to feed into `ln`.
#[inline]
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Exponential draw with the given rate by inversion.
#[inline]
pub fn exponential<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -open_unit(rng).ln() / rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..8).map(|_| system_stream(7).random()).collect();
        let b: Vec<u64> = (0..8).map(|_| system_stream(7).random()).collect();
        assert_eq!(a, b);
        let mut r1 = particle_stream(7, 3, StreamRole::Brownian);
        let mut r2 = particle_stream(7, 3, StreamRole::Brownian);
        for _ in 0..16 {
            assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        }
    }

    #[test]
    fn distinct_paths_give_distinct_streams() {
        let mut seen = std::collections::HashSet::new();
        for rep in 0..4u64 {
            let rs = replication_seed(11, rep);
            seen.insert(system_stream(rs).random::<u64>());
            for i in 0..64 {
                for role in [StreamRole::Brownian, StreamRole::Decision, StreamRole::Initial] {
                    seen.insert(particle_stream(rs, i, role).random::<u64>());
                }
            }
        }
        assert_eq!(seen.len(), 4 * (1 + 64 * 3));
    }

    #[test]
    fn open_unit_never_zero() {
        let mut r = rng_from_seed(1);
        for _ in 0..100_000 {
            let u = open_unit(&mut r);
            assert!(u > 0.0 && u <= 1.0);
        }
    }
}
