//! Deterministic RNG streams.
//!
//! Everything stochastic in this crate draws from ChaCha streams keyed by
//! `(seed, stream)`. Distinct stream ids yield statistically independent
//! sequences, and a given `(seed, stream)` pair produces the same bytes
//! regardless of thread count or evaluation order — which is what makes
//! parallel likelihood evaluation reproducible bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// RNG type used throughout the crate.
pub type Rng = ChaCha12Rng;

/// Independent substream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Root stream for `seed` (stream id 0).
pub fn root(seed: u64) -> Rng {
    substream(seed, 0)
}
