//! Privacy auditing for graph prompt learning.
//!
//! The crate trains prompt-tuned GNN pipelines on a frozen, self-supervised
//! encoder, exposes the three attacker-visible outputs (posteriors, node
//! embeddings, per-node prompts), mounts attribute- and link-inference
//! attacks against them, and measures a Laplace-noise release defense.

pub mod attacks;
pub mod defense;
pub mod encoder;
pub mod graphdata;
pub mod harness;
pub mod numcore;
pub mod pretrain;
pub mod prompt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one `(seed, stream)` pair. Distinct streams
/// keep independent consumers of the same seed from sharing draws.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
pub(crate) mod testutil;

pub use numcore::{Tensor2, Tape, Var, ParamSet};
