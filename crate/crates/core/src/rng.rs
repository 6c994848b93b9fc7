//! Counter-based random substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed
//! by `(seed, domain)` and selected by a 64-bit stream index. The index is
//! the sample (or frame) number, so sample `i` always sees the same bits no
//! matter how the work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent families of random draws sharing one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    Fading = 1,
    Laplace = 2,
    Decoding = 3,
    /// Per-frame gains of the queue simulator.
    Frames = 4,
}

/// Returns the generator for substream `index` of `(seed, domain)`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&(domain as u32).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform draw on `(0, 1]`.
#[inline]
pub fn open_closed_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}
