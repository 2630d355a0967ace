//! Learnable tensors of the autoencoder and their seeded initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::umae::TrainConfig;

/// Static shape information shared by parameters, activations and the
/// checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub latent_dim: usize,
    pub group_rows: usize, // ℓ·p²
    pub bands: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub group_len: usize,
}

impl ModelDims {
    pub fn from_config(config: &TrainConfig, bands: usize) -> Self {
        ModelDims {
            latent_dim: config.latent_dim,
            group_rows: config.group_len * config.patch * config.patch,
            bands,
            enc_depth: config.enc_depth,
            dec_depth: config.dec_depth,
            n_heads: config.n_heads,
            mlp_ratio: config.mlp_ratio,
            patch: config.patch,
            group_len: config.group_len,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.n_heads
    }
}

/// One pre-norm transformer block: LayerNorm, multi-head self-attention,
/// residual, LayerNorm, two-layer MLP with GELU, residual.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_scale: Vec<f64>,
    pub ln1_shift: Vec<f64>,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_scale: Vec<f64>,
    pub ln2_shift: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl BlockParams {
    fn zeros(d: usize, hidden: usize) -> Self {
        BlockParams {
            ln1_scale: vec![0.0; d],
            ln1_shift: vec![0.0; d],
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            ln2_scale: vec![0.0; d],
            ln2_shift: vec![0.0; d],
            w1: Mat::zeros(hidden, d),
            b1: vec![0.0; hidden],
            w2: Mat::zeros(d, hidden),
            b2: vec![0.0; d],
        }
    }

    fn tensors(&self) -> Vec<&Vec<f64>> {
        vec![
            &self.ln1_scale,
            &self.ln1_shift,
            &self.wq.data,
            &self.wk.data,
            &self.wv.data,
            &self.wo.data,
            &self.ln2_scale,
            &self.ln2_shift,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.ln1_scale,
            &mut self.ln1_shift,
            &mut self.wq.data,
            &mut self.wk.data,
            &mut self.wv.data,
            &mut self.wo.data,
            &mut self.ln2_scale,
            &mut self.ln2_shift,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    const TENSOR_NAMES: [&'static str; 12] = [
        "ln1_scale", "ln1_shift", "wq", "wk", "wv", "wo", "ln2_scale", "ln2_shift", "w1", "b1",
        "w2", "b2",
    ];
}

/// Every learnable tensor of the autoencoder. Field order is the checkpoint
/// serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct UmaeParams {
    pub dims: ModelDims,
    /// D×ℓp² group embedding.
    pub w_proj: Mat,
    /// D×B encoder positional encodings.
    pub s_g: Mat,
    pub encoder_blocks: Vec<BlockParams>,
    /// D×D decoder projection.
    pub u_proj: Mat,
    /// D×B decoder positional encodings.
    pub s_g_dec: Mat,
    /// Learnable mask token.
    pub mask_token: Vec<f64>,
    /// ℓp²×D reconstruction head.
    pub h_out: Mat,
    pub decoder_blocks: Vec<BlockParams>,
}

impl UmaeParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.latent_dim;
        let hidden = dims.mlp_ratio * d;
        UmaeParams {
            dims,
            w_proj: Mat::zeros(d, dims.group_rows),
            s_g: Mat::zeros(d, dims.bands),
            encoder_blocks: (0..dims.enc_depth).map(|_| BlockParams::zeros(d, hidden)).collect(),
            u_proj: Mat::zeros(d, d),
            s_g_dec: Mat::zeros(d, dims.bands),
            mask_token: vec![0.0; d],
            h_out: Mat::zeros(dims.group_rows, d),
            decoder_blocks: (0..dims.dec_depth).map(|_| BlockParams::zeros(d, hidden)).collect(),
        }
    }

    /// Seeded initialization: scaled uniform fan-in for every projection,
    /// ones for LayerNorm scales, zeros for shifts, positional encodings
    /// and the mask token.
    pub fn init(config: &TrainConfig, bands: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if bands == 0 {
            return Err(Error::param("band count must be positive"));
        }
        let dims = ModelDims::from_config(config, bands);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = UmaeParams::zeros(dims);

        fn fill_uniform(m: &mut Mat, fan_in: usize, rng: &mut ChaCha8Rng) {
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }

        fill_uniform(&mut p.w_proj, dims.group_rows, &mut rng);
        for block in p.encoder_blocks.iter_mut().chain(p.decoder_blocks.iter_mut()) {
            for s in block.ln1_scale.iter_mut().chain(block.ln2_scale.iter_mut()) {
                *s = 1.0;
            }
            fill_uniform(&mut block.wq, dims.latent_dim, &mut rng);
            fill_uniform(&mut block.wk, dims.latent_dim, &mut rng);
            fill_uniform(&mut block.wv, dims.latent_dim, &mut rng);
            fill_uniform(&mut block.wo, dims.latent_dim, &mut rng);
            fill_uniform(&mut block.w1, dims.latent_dim, &mut rng);
            fill_uniform(&mut block.w2, dims.mlp_ratio * dims.latent_dim, &mut rng);
        }
        fill_uniform(&mut p.u_proj, dims.latent_dim, &mut rng);
        fill_uniform(&mut p.h_out, dims.latent_dim, &mut rng);
        Ok(p)
    }

    /// All tensors in declaration order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.w_proj.data, &self.s_g.data];
        for b in &self.encoder_blocks {
            v.extend(b.tensors());
        }
        v.push(&self.u_proj.data);
        v.push(&self.s_g_dec.data);
        v.push(&self.mask_token);
        v.push(&self.h_out.data);
        for b in &self.decoder_blocks {
            v.extend(b.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![&mut self.w_proj.data, &mut self.s_g.data];
        for b in &mut self.encoder_blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.u_proj.data);
        v.push(&mut self.s_g_dec.data);
        v.push(&mut self.mask_token);
        v.push(&mut self.h_out.data);
        for b in &mut self.decoder_blocks {
            v.extend(b.tensors_mut());
        }
        v
    }

    /// Names aligned with [`UmaeParams::tensors`], for diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["w_proj".to_string(), "s_g".to_string()];
        for (i, _) in self.encoder_blocks.iter().enumerate() {
            for name in BlockParams::TENSOR_NAMES {
                v.push(format!("enc{i}.{name}"));
            }
        }
        v.push("u_proj".to_string());
        v.push("s_g_dec".to_string());
        v.push("mask_token".to_string());
        v.push("h_out".to_string());
        for (i, _) in self.decoder_blocks.iter().enumerate() {
            for name in BlockParams::TENSOR_NAMES {
                v.push(format!("dec{i}.{name}"));
            }
        }
        v
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// dst += scale * src, tensor by tensor.
    pub fn add_scaled(&mut self, other: &UmaeParams, scale: f64) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, &x) in dst.iter_mut().zip(s.iter()) {
                *d += scale * x;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}
