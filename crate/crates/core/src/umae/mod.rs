//! Masked spatial-spectral transformer autoencoder.
//!
//! Each training pixel contributes a p×p patch whose per-band slices are
//! grouped over ℓ adjacent bands (with modular wrap) into the columns of a
//! group matrix. Groups are linearly embedded, positionally encoded, and a
//! random subset of band tokens is hidden; a transformer encoder reads the
//! visible tokens and a transformer decoder reconstructs the hidden groups.
//! After pretraining, running the encoder unmasked and mean-pooling its
//! output tokens yields the per-pixel latent feature.

mod backward;
mod checkpoint;
mod forward;
mod params;
mod train;

pub use backward::{backward, sample_loss_and_grads};
pub use checkpoint::{load_checkpoint, load_loss_log, save_checkpoint, save_loss_log};
pub use forward::{
    decoder_forward, encoder_forward, mask_tokens, mse_masked, sample_forward, tokenize,
    SampleForward,
};
pub use params::{BlockParams, ModelDims, UmaeParams};
pub use train::{encode_latent, train, TrainOutcome};

use crate::error::{Error, Result};
use crate::io::HsiCube;
use crate::numerics::Mat;

/// All training hyperparameters. `group_len` is the number of adjacent bands
/// per spatial-spectral group (odd), `patch` the spatial patch size (odd),
/// `mask_ratio` the fraction of band tokens hidden during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_t: usize,
    pub mask_ratio: f64,
    pub patch: usize,
    pub group_len: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_t: 512,
            mask_ratio: 0.5,
            patch: 3,
            group_len: 3,
            latent_dim: 48,
            epochs: 50,
            enc_depth: 4,
            dec_depth: 2,
            n_heads: 4,
            mlp_ratio: 2,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::param(format!(
                "mask_ratio {} must lie in [0,1)",
                self.mask_ratio
            )));
        }
        if self.patch % 2 == 0 || self.patch == 0 {
            return Err(Error::param("patch size must be odd"));
        }
        if self.group_len % 2 == 0 || self.group_len == 0 {
            return Err(Error::param("group length must be odd"));
        }
        if self.latent_dim == 0 || self.latent_dim % self.n_heads != 0 {
            return Err(Error::param(format!(
                "latent_dim {} must be a positive multiple of n_heads {}",
                self.latent_dim, self.n_heads
            )));
        }
        if self.n_t == 0 || self.batch_size == 0 {
            return Err(Error::param("n_t and batch_size must be positive"));
        }
        Ok(())
    }

    /// Number of visible band tokens under the mask ratio.
    pub fn k_visible(&self, bands: usize) -> usize {
        (((1.0 - self.mask_ratio) * bands as f64).round() as usize).max(1)
    }
}

/// Flattened spatial-spectral groups of one patch: column b holds the
/// concatenation of the ℓ flattened band slices centered (modularly) on
/// band b, so the matrix is (ℓ·p²)×B.
#[derive(Debug, Clone)]
pub struct GroupMatrix {
    pub matrix: Mat,
    pub patch_size: usize,
    pub group_len: usize,
    pub source_pixel: Option<usize>,
}

/// Extract the p×p×B patch centered on original pixel (row, col) from the
/// reflection-padded cube produced by [`crate::io::pad_reflect`].
pub fn extract_patch(padded: &HsiCube, row: usize, col: usize, p: usize) -> HsiCube {
    let b = padded.bands;
    let mut data = Vec::with_capacity(p * p * b);
    for r in row..row + p {
        let start = (r * padded.width + col) * b;
        data.extend_from_slice(&padded.data[start..start + p * b]);
    }
    HsiCube {
        height: p,
        width: p,
        bands: b,
        data,
    }
}

/// Build the group matrix of a p×p×B patch with modular band wrap.
pub fn build_groups(patch: &HsiCube, group_len: usize) -> Result<GroupMatrix> {
    if group_len % 2 == 0 || group_len == 0 {
        return Err(Error::param("group length must be odd"));
    }
    if patch.height != patch.width {
        return Err(Error::contract("patch must be square"));
    }
    let p2 = patch.height * patch.width;
    let bands = patch.bands;
    let half = (group_len / 2) as isize;
    let mut matrix = Mat::zeros(group_len * p2, bands);
    for band in 0..bands {
        for offset in -half..=half {
            let src_band = (band as isize + offset).rem_euclid(bands as isize) as usize;
            let row_base = ((offset + half) as usize) * p2;
            for px in 0..p2 {
                matrix.set(row_base + px, band, patch.data[px * bands + src_band]);
            }
        }
    }
    Ok(GroupMatrix {
        matrix,
        patch_size: patch.height,
        group_len,
        source_pixel: None,
    })
}

/// Farthest point sampling over feature rows: the first pick is the point
/// farthest from the dataset mean, each later pick maximizes the minimum
/// distance to everything already selected. Ties go to the lower index.
pub fn fps_select(features: &Mat, n_t: usize) -> Result<Vec<usize>> {
    let n = features.rows;
    if n_t > n {
        return Err(Error::param(format!(
            "cannot select {n_t} training pixels from {n}"
        )));
    }
    if n_t == 0 {
        return Ok(Vec::new());
    }
    let d = features.cols;
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let argmax = |dist: &[f64]| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &v) in dist.iter().enumerate() {
            if v > best_d {
                best_d = v;
                best = i;
            }
        }
        best
    };

    let from_mean: Vec<f64> = (0..n)
        .map(|r| crate::numerics::squared_distance(features.row(r), &mean))
        .collect();
    let first = argmax(&from_mean);

    let mut selected = Vec::with_capacity(n_t);
    selected.push(first);
    let mut min_dist: Vec<f64> = (0..n)
        .map(|r| crate::numerics::squared_distance(features.row(r), features.row(first)))
        .collect();
    while selected.len() < n_t {
        let next = argmax(&min_dist);
        selected.push(next);
        for r in 0..n {
            let d2 = crate::numerics::squared_distance(features.row(r), features.row(next));
            if d2 < min_dist[r] {
                min_dist[r] = d2;
            }
        }
    }
    Ok(selected)
}
