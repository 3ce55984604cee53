//! Deterministic RNG substream derivation.
//!
//! Every randomized stage derives its generator from `(seed, domain, index)`
//! through a SplitMix64 chain, so draw `s` of one stage never shares a stream
//! with draw `s` of another stage or with any other draw of the same stage.
//! That is what makes results independent of scheduling: parallel workers get
//! the same substream no matter which thread runs them, and a retry at slot
//! `s` cannot shift the randomness of slot `s + 1`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags keep substreams of different stages disjoint even when they
/// share the user seed and the slot index.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Domain {
    PhiStage = 1,
    EtaStage = 2,
    Bootstrap = 4,
    FullChain = 5,
    SmiChain = 6,
    CredibleSet = 7,
    Simulate = 8,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha generator for `(seed, domain, index)`, filled from a SplitMix64
/// expansion of the three inputs.
pub(crate) fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha12Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= (domain as u64).wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xa076_1d64_78bd_642f);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&a.to_le_bytes());
    bytes[8..16].copy_from_slice(&b.to_le_bytes());
    bytes[16..24].copy_from_slice(&c.to_le_bytes());
    bytes[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}
