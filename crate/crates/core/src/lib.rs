//! Unsupervised hyperspectral image (HSI) clustering.
//!
//! Two-stage pipeline:
//!
//! 1. A masked spatial-spectral transformer autoencoder ([`umae`]) is
//!    pretrained to reconstruct hidden spectral groups of a small set of
//!    training pixels, then run unmasked over the whole scene to produce a
//!    denoised per-pixel latent cube.
//! 2. A superpixel-regularized diffusion-learning stage ([`diffusion`])
//!    segments the scene with entropy-rate superpixels, builds a spatially
//!    gated kNN graph over high-density representative pixels, and assigns
//!    cluster labels by density/diffusion-distance mode seeking followed by
//!    per-superpixel majority voting.
//!
//! Running stage 2 on the latent cube is the `ds2dl` mode; running it on the
//! raw (normalized) spectra is the `s2dl` baseline. [`metrics`] evaluates
//! either result against a ground-truth mask, and [`synth`] generates seeded
//! synthetic scenes for end-to-end checks.

pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod superpixel;
pub mod synth;
pub mod umae;

pub use error::{Error, Result};
pub use io::{HsiCube, LabelMask};
