//! Forward passes with cached activations for the manual backward pass.
//!
//! Tokens are the columns of D×K matrices throughout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::umae::{BlockParams, GroupMatrix, UmaeParams};

pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Primitive layers
// ---------------------------------------------------------------------------

pub(crate) struct LayerNormCache {
    /// normalized activations (before scale/shift), D×K
    pub xhat: Mat,
    /// 1/sqrt(var + eps) per token
    pub inv_std: Vec<f64>,
}

/// Per-token LayerNorm over the feature axis.
pub(crate) fn layer_norm(x: &Mat, scale: &[f64], shift: &[f64]) -> (Mat, LayerNormCache) {
    let (d, k) = (x.rows, x.cols);
    let mut out = Mat::zeros(d, k);
    let mut xhat = Mat::zeros(d, k);
    let mut inv_std = vec![0.0; k];
    for t in 0..k {
        let mut mean = 0.0;
        for r in 0..d {
            mean += x.at(r, t);
        }
        mean /= d as f64;
        let mut var = 0.0;
        for r in 0..d {
            let c = x.at(r, t) - mean;
            var += c * c;
        }
        var /= d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[t] = is;
        for r in 0..d {
            let h = (x.at(r, t) - mean) * is;
            xhat.set(r, t, h);
            out.set(r, t, h * scale[r] + shift[r]);
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) struct BlockCache {
    pub ln1: LayerNormCache,
    pub ln1_out: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// per head, K×K row-softmax attention weights (row = query token)
    pub attn: Vec<Mat>,
    /// concatenated head outputs before the output projection, D×K
    pub ctx: Mat,
    pub ln2: LayerNormCache,
    pub ln2_out: Mat,
    pub mlp_pre: Mat,
    pub mlp_act: Mat,
}

/// One pre-norm transformer block.
pub(crate) fn block_forward(x: &Mat, p: &BlockParams, n_heads: usize) -> (Mat, BlockCache) {
    let (d, k) = (x.rows, x.cols);
    let head_dim = d / n_heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();

    let (ln1_out, ln1) = layer_norm(x, &p.ln1_scale, &p.ln1_shift);
    let q = p.wq.matmul(&ln1_out);
    let kk = p.wk.matmul(&ln1_out);
    let v = p.wv.matmul(&ln1_out);

    let mut ctx = Mat::zeros(d, k);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let base = h * head_dim;
        let mut weights = Mat::zeros(k, k);
        for qi in 0..k {
            // scores and a numerically stable softmax over key tokens
            let mut row_max = f64::NEG_INFINITY;
            for kj in 0..k {
                let mut s = 0.0;
                for r in 0..head_dim {
                    s += q.at(base + r, qi) * kk.at(base + r, kj);
                }
                let s = s * inv_sqrt;
                weights.set(qi, kj, s);
                if s > row_max {
                    row_max = s;
                }
            }
            let mut sum = 0.0;
            for kj in 0..k {
                let e = (weights.at(qi, kj) - row_max).exp();
                weights.set(qi, kj, e);
                sum += e;
            }
            for kj in 0..k {
                let w = weights.at(qi, kj) / sum;
                weights.set(qi, kj, w);
                for r in 0..head_dim {
                    let c = ctx.at(base + r, qi) + w * v.at(base + r, kj);
                    ctx.set(base + r, qi, c);
                }
            }
        }
        attn.push(weights);
    }

    let attn_out = p.wo.matmul(&ctx);
    let mut res1 = x.clone();
    for (r, &a) in res1.data.iter_mut().zip(attn_out.data.iter()) {
        *r += a;
    }

    let (ln2_out, ln2) = layer_norm(&res1, &p.ln2_scale, &p.ln2_shift);
    let mut mlp_pre = p.w1.matmul(&ln2_out);
    for t in 0..k {
        for (r, &b) in p.b1.iter().enumerate() {
            let v2 = mlp_pre.at(r, t) + b;
            mlp_pre.set(r, t, v2);
        }
    }
    let mut mlp_act = mlp_pre.clone();
    for v2 in mlp_act.data.iter_mut() {
        *v2 = gelu(*v2);
    }
    let mut out = p.w2.matmul(&mlp_act);
    for t in 0..k {
        for (r, &b) in p.b2.iter().enumerate() {
            let v2 = out.at(r, t) + b;
            out.set(r, t, v2);
        }
    }
    for (o, &r) in out.data.iter_mut().zip(res1.data.iter()) {
        *o += r;
    }

    let cache = BlockCache {
        ln1,
        ln1_out,
        q,
        k: kk,
        v,
        attn,
        ctx,
        ln2,
        ln2_out,
        mlp_pre,
        mlp_act,
    };
    (out, cache)
}

// ---------------------------------------------------------------------------
// Model-level operations
// ---------------------------------------------------------------------------

/// Positional token matrix W·V_G + s_G, D×B.
pub fn tokenize(groups: &GroupMatrix, params: &UmaeParams) -> Result<Mat> {
    let d = params.dims.latent_dim;
    if groups.matrix.rows != params.dims.group_rows || groups.matrix.cols != params.dims.bands {
        return Err(Error::contract(format!(
            "group matrix {}x{} does not match model dims {}x{}",
            groups.matrix.rows, groups.matrix.cols, params.dims.group_rows, params.dims.bands
        )));
    }
    let mut m = params.w_proj.matmul(&groups.matrix);
    debug_assert_eq!(m.rows, d);
    for r in 0..d {
        for c in 0..params.dims.bands {
            let v = m.at(r, c) + params.s_g.at(r, c);
            m.set(r, c, v);
        }
    }
    Ok(m)
}

/// Hide a uniform random subset of band tokens. Returns the visible columns
/// in band order plus the sorted visible/masked index sets. The visible
/// count is max(1, round((1-mask_ratio)·B)).
pub fn mask_tokens(
    m_pos: &Mat,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> (Mat, Vec<usize>, Vec<usize>) {
    let bands = m_pos.cols;
    let k_vis = (((1.0 - mask_ratio) * bands as f64).round() as usize)
        .max(1)
        .min(bands);

    // partial Fisher-Yates, then sort the chosen prefix
    let mut idx: Vec<usize> = (0..bands).collect();
    for i in 0..k_vis {
        let j = rng.gen_range(i..bands);
        idx.swap(i, j);
    }
    let mut visible: Vec<usize> = idx[..k_vis].to_vec();
    visible.sort_unstable();
    let vis_set: std::collections::HashSet<usize> = visible.iter().copied().collect();
    let masked: Vec<usize> = (0..bands).filter(|b| !vis_set.contains(b)).collect();

    let mut m_visible = Mat::zeros(m_pos.rows, k_vis);
    for (out_c, &b) in visible.iter().enumerate() {
        for r in 0..m_pos.rows {
            m_visible.set(r, out_c, m_pos.at(r, b));
        }
    }
    (m_visible, visible, masked)
}

/// Encoder stack over the visible tokens.
pub fn encoder_forward(m_visible: &Mat, params: &UmaeParams) -> Result<Mat> {
    let (out, _caches) = encoder_forward_cached(m_visible, params)?;
    Ok(out)
}

pub(crate) fn encoder_forward_cached(
    m_visible: &Mat,
    params: &UmaeParams,
) -> Result<(Mat, Vec<BlockCache>)> {
    if m_visible.rows != params.dims.latent_dim {
        return Err(Error::contract(format!(
            "token dimension {} does not match latent dim {}",
            m_visible.rows, params.dims.latent_dim
        )));
    }
    let mut x = m_visible.clone();
    let mut caches = Vec::with_capacity(params.encoder_blocks.len());
    for (i, block) in params.encoder_blocks.iter().enumerate() {
        let (y, cache) = block_forward(&x, block, params.dims.n_heads);
        if !y.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite activations in encoder block {i}"
            )));
        }
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

pub(crate) struct DecoderCache {
    pub blocks: Vec<BlockCache>,
    pub z_out: Mat,
}

/// Decoder: project visible latent tokens, insert the mask token at masked
/// bands, add decoder positional encodings in original band order, run the
/// decoder stack, and apply the reconstruction head at masked positions.
pub fn decoder_forward(
    l_tokens: &Mat,
    visible_idx: &[usize],
    masked_idx: &[usize],
    params: &UmaeParams,
) -> Result<Mat> {
    let (recon, _cache) = decoder_forward_cached(l_tokens, visible_idx, masked_idx, params)?;
    Ok(recon)
}

fn check_partition(visible: &[usize], masked: &[usize], bands: usize) -> Result<()> {
    let mut seen = vec![false; bands];
    for &b in visible.iter().chain(masked.iter()) {
        if b >= bands {
            return Err(Error::contract(format!("band index {b} out of range")));
        }
        if seen[b] {
            return Err(Error::contract(format!(
                "band {b} appears twice across visible/masked sets"
            )));
        }
        seen[b] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::contract(
            "visible and masked sets do not cover every band",
        ));
    }
    Ok(())
}

pub(crate) fn decoder_forward_cached(
    l_tokens: &Mat,
    visible_idx: &[usize],
    masked_idx: &[usize],
    params: &UmaeParams,
) -> Result<(Mat, DecoderCache)> {
    let d = params.dims.latent_dim;
    let bands = params.dims.bands;
    check_partition(visible_idx, masked_idx, bands)?;
    if l_tokens.rows != d || l_tokens.cols != visible_idx.len() {
        return Err(Error::contract(format!(
            "latent tokens {}x{} do not match {} visible bands of dim {}",
            l_tokens.rows,
            l_tokens.cols,
            visible_idx.len(),
            d
        )));
    }

    let mut z = Mat::zeros(d, bands);
    for (j, &b) in visible_idx.iter().enumerate() {
        let proj = params.u_proj.matvec(&l_tokens.col(j));
        for r in 0..d {
            z.set(r, b, proj[r] + params.s_g_dec.at(r, b));
        }
    }
    for &b in masked_idx {
        for r in 0..d {
            z.set(r, b, params.mask_token[r] + params.s_g_dec.at(r, b));
        }
    }

    let mut caches = Vec::with_capacity(params.decoder_blocks.len());
    for (i, block) in params.decoder_blocks.iter().enumerate() {
        let (y, cache) = block_forward(&z, block, params.dims.n_heads);
        if !y.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite activations in decoder block {i}"
            )));
        }
        caches.push(cache);
        z = y;
    }

    let mut recon = Mat::zeros(params.dims.group_rows, masked_idx.len());
    for (c, &b) in masked_idx.iter().enumerate() {
        let col = params.h_out.matvec(&z.col(b));
        for (r, &v) in col.iter().enumerate() {
            recon.set(r, c, v);
        }
    }
    let cache = DecoderCache {
        blocks: caches,
        z_out: z,
    };
    Ok((recon, cache))
}

/// Mean squared error over the masked entries only.
pub fn mse_masked(reconstructed: &Mat, target_groups: &Mat, masked_idx: &[usize]) -> Result<f64> {
    if masked_idx.is_empty() {
        return Err(Error::contract(
            "masked set is empty; reconstruction loss is undefined",
        ));
    }
    if reconstructed.rows != target_groups.rows || reconstructed.cols != masked_idx.len() {
        return Err(Error::contract(format!(
            "reconstruction {}x{} does not match {} masked columns of {} rows",
            reconstructed.rows,
            reconstructed.cols,
            masked_idx.len(),
            target_groups.rows
        )));
    }
    let mut sum = 0.0;
    for (c, &b) in masked_idx.iter().enumerate() {
        for r in 0..reconstructed.rows {
            let diff = reconstructed.at(r, c) - target_groups.at(r, b);
            sum += diff * diff;
        }
    }
    Ok(sum / (reconstructed.rows * masked_idx.len()) as f64)
}

/// Everything cached from one training sample's forward pass.
pub struct SampleForward {
    pub m_pos: Mat,
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub enc_input: Mat,
    pub(crate) enc_caches: Vec<BlockCache>,
    pub l_tokens: Mat,
    pub(crate) dec_cache: DecoderCache,
    pub recon: Mat,
    pub loss: f64,
}

/// Full forward pass of one sample: tokenize, mask, encode, decode, loss.
pub fn sample_forward(
    groups: &GroupMatrix,
    params: &UmaeParams,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleForward> {
    let m_pos = tokenize(groups, params)?;
    let (enc_input, visible, masked) = mask_tokens(&m_pos, mask_ratio, rng);
    if masked.is_empty() {
        return Err(Error::contract(
            "mask ratio left no masked bands; nothing to reconstruct",
        ));
    }
    let (l_tokens, enc_caches) = encoder_forward_cached(&enc_input, params)?;
    let (recon, dec_cache) = decoder_forward_cached(&l_tokens, &visible, &masked, params)?;
    let loss = mse_masked(&recon, &groups.matrix, &masked)?;
    Ok(SampleForward {
        m_pos,
        visible,
        masked,
        enc_input,
        enc_caches,
        l_tokens,
        dec_cache,
        recon,
        loss,
    })
}
