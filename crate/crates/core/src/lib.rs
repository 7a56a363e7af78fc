//! Multimodal record linkage.
//!
//! Records carry an OCR'd name and an optional visual embedding. Both
//! modalities are embedded by a pair of encoders, mean-pooled, and linked to a
//! target directory by exact inner-product retrieval. The crate also carries
//! the contrastive objectives used to train the encoders, offline
//! hard-negative batch mining, a synthetic OCR-noise data generator, and the
//! edit-distance and n-gram baselines linkage is usually compared against.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod linkage;
pub mod metricspace;
pub mod mining;
pub mod optim;
pub mod strmetrics;
pub mod synth;
pub mod vecindex;

pub use error::{Error, Result};

pub(crate) mod par;

/// Derives an independent 64-bit seed for a sub-stream (epoch, word index,
/// …) of a master seed with the SplitMix64 finalizer.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
