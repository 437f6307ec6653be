//! Reproducible stream derivation for parallel path sampling.
//!
//! Every path draws from its own ChaCha8 stream: the 256-bit state is
//! expanded from the 64-bit master seed (SplitMix64 expansion inside
//! `seed_from_u64`) and the stream word is the path index. Streams are
//! independent of thread count and scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator identifier recorded in output metadata.
pub const RNG_ID: &str = "chacha8(seed_from_u64(master_seed), stream=path_index)";

/// Seed of a single path: the ensemble master seed plus the path's stream
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSeed {
    pub master: u64,
    pub stream: u64,
}

impl PathSeed {
    pub fn new(master: u64, stream: u64) -> Self {
        PathSeed { master, stream }
    }
}

/// The RNG for one path.
pub fn path_rng(seed: PathSeed) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.master);
    rng.set_stream(seed.stream);
    rng
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sequence of derived master seeds (used for independent
/// retry runs). The first element is the master seed itself.
pub fn seed_sequence(master_seed: u64, count: usize) -> Vec<u64> {
    let mut state = master_seed;
    std::iter::once(master_seed)
        .chain(std::iter::repeat_with(move || splitmix64(&mut state)))
        .take(count)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = path_rng(PathSeed::new(7, 0));
        let mut b = path_rng(PathSeed::new(7, 0));
        let mut c = path_rng(PathSeed::new(7, 1));
        let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.random()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn seed_sequence_starts_with_master_and_is_stable() {
        let seeds = seed_sequence(42, 3);
        assert_eq!(seeds.len(), 3);
        assert_eq!(seeds[0], 42);
        assert_eq!(seeds, seed_sequence(42, 3));
        assert_ne!(seeds[1], seeds[2]);
    }
}
