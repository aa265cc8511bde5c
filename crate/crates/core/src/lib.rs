//! Activity recognition from triaxial accelerometers.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`] loads WISDM, Daphnet and Skoda recordings and cuts them into
//!    labeled sliding windows.
//! 2. [`spectral`] turns each window into the concatenated one-sided magnitude
//!    spectra of the three axes, `L = 3(N/2 + 1)` values.
//! 3. [`dbn`] stacks restricted Boltzmann machines ([`rbm`]), pretrains them
//!    greedily without labels, then fine-tunes the stack with a softmax head.
//! 4. [`hmm`] optionally decodes sequences of windows with a hidden Markov
//!    model whose emissions are the network's scaled posteriors.
//!
//! [`metrics`] implements confusion-matrix accounting and the evaluation
//! measures used throughout.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dbn;
pub mod error;
pub mod hmm;
pub mod ingest;
pub mod metrics;
pub mod rbm;
pub mod spectral;

pub use error::{Error, Result};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derives an independent stream seed from a master seed (SplitMix64 mix).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
