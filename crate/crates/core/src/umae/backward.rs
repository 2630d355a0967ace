//! Analytic gradients of the masked reconstruction loss with respect to
//! every parameter tensor, mirroring the forward pass in reverse.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::Mat;
use crate::umae::forward::{gelu_grad, BlockCache, LayerNormCache, SampleForward};
use crate::umae::{BlockParams, GroupMatrix, UmaeParams};

/// LayerNorm backward for one D×K activation; accumulates dγ/dβ and
/// returns dx.
fn layer_norm_backward(
    dy: &Mat,
    cache: &LayerNormCache,
    scale: &[f64],
    d_scale: &mut [f64],
    d_shift: &mut [f64],
) -> Mat {
    let (d, k) = (dy.rows, dy.cols);
    let mut dx = Mat::zeros(d, k);
    for t in 0..k {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for r in 0..d {
            let g = dy.at(r, t);
            let xh = cache.xhat.at(r, t);
            d_scale[r] += g * xh;
            d_shift[r] += g;
            let dxh = g * scale[r];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh;
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[t];
        for r in 0..d {
            let dxh = dy.at(r, t) * scale[r];
            let xh = cache.xhat.at(r, t);
            dx.set(r, t, is * (dxh - mean_dxhat - xh * mean_dxhat_xhat));
        }
    }
    dx
}

/// One transformer block backward; accumulates parameter gradients and
/// returns the gradient with respect to the block input.
fn block_backward(
    dy: &Mat,
    cache: &BlockCache,
    p: &BlockParams,
    g: &mut BlockParams,
    n_heads: usize,
) -> Mat {
    let (d, k) = (dy.rows, dy.cols);
    let head_dim = d / n_heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();

    // out = res1 + W2·gelu(W1·ln2(res1) + b1) + b2
    let d_mlp_out = dy;
    let d_w2 = d_mlp_out.matmul_nt(&cache.mlp_act);
    for (dst, src) in g.w2.data.iter_mut().zip(d_w2.data.iter()) {
        *dst += src;
    }
    for t in 0..k {
        for r in 0..d {
            g.b2[r] += d_mlp_out.at(r, t);
        }
    }
    let mut d_pre = p.w2.matmul_tn(d_mlp_out);
    for (dp, pre) in d_pre.data.iter_mut().zip(cache.mlp_pre.data.iter()) {
        *dp *= gelu_grad(*pre);
    }
    let d_w1 = d_pre.matmul_nt(&cache.ln2_out);
    for (dst, src) in g.w1.data.iter_mut().zip(d_w1.data.iter()) {
        *dst += src;
    }
    for t in 0..k {
        for r in 0..d_pre.rows {
            g.b1[r] += d_pre.at(r, t);
        }
    }
    let d_ln2_out = p.w1.matmul_tn(&d_pre);
    let d_res1_ln = layer_norm_backward(
        &d_ln2_out,
        &cache.ln2,
        &p.ln2_scale,
        &mut g.ln2_scale,
        &mut g.ln2_shift,
    );
    // res1 feeds both the final residual and the MLP branch
    let mut d_res1 = dy.clone();
    for (a, b) in d_res1.data.iter_mut().zip(d_res1_ln.data.iter()) {
        *a += b;
    }

    // res1 = x + Wo·ctx
    let d_attn_out = &d_res1;
    let d_wo = d_attn_out.matmul_nt(&cache.ctx);
    for (dst, src) in g.wo.data.iter_mut().zip(d_wo.data.iter()) {
        *dst += src;
    }
    let d_ctx = p.wo.matmul_tn(d_attn_out);

    let mut dq = Mat::zeros(d, k);
    let mut dk = Mat::zeros(d, k);
    let mut dv = Mat::zeros(d, k);
    for h in 0..n_heads {
        let base = h * head_dim;
        let attn = &cache.attn[h];
        for qi in 0..k {
            // dA over the attention row, then softmax backward
            let mut d_row = vec![0.0; k];
            for (kj, dr) in d_row.iter_mut().enumerate() {
                let mut s = 0.0;
                for r in 0..head_dim {
                    s += d_ctx.at(base + r, qi) * cache.v.at(base + r, kj);
                }
                *dr = s;
            }
            let inner: f64 = (0..k).map(|j| d_row[j] * attn.at(qi, j)).sum();
            for kj in 0..k {
                let a = attn.at(qi, kj);
                let ds = a * (d_row[kj] - inner) * inv_sqrt;
                for r in 0..head_dim {
                    let vq = dq.at(base + r, qi) + ds * cache.k.at(base + r, kj);
                    dq.set(base + r, qi, vq);
                    let vk = dk.at(base + r, kj) + ds * cache.q.at(base + r, qi);
                    dk.set(base + r, kj, vk);
                }
                // dv from the weighted value sum
                for r in 0..head_dim {
                    let vv = dv.at(base + r, kj) + a * d_ctx.at(base + r, qi);
                    dv.set(base + r, kj, vv);
                }
            }
        }
    }

    let d_wq = dq.matmul_nt(&cache.ln1_out);
    let d_wk = dk.matmul_nt(&cache.ln1_out);
    let d_wv = dv.matmul_nt(&cache.ln1_out);
    for (dst, src) in g.wq.data.iter_mut().zip(d_wq.data.iter()) {
        *dst += src;
    }
    for (dst, src) in g.wk.data.iter_mut().zip(d_wk.data.iter()) {
        *dst += src;
    }
    for (dst, src) in g.wv.data.iter_mut().zip(d_wv.data.iter()) {
        *dst += src;
    }
    let mut d_ln1_out = p.wq.matmul_tn(&dq);
    let t2 = p.wk.matmul_tn(&dk);
    let t3 = p.wv.matmul_tn(&dv);
    for ((a, b), c) in d_ln1_out
        .data
        .iter_mut()
        .zip(t2.data.iter())
        .zip(t3.data.iter())
    {
        *a += b + c;
    }
    let d_x_ln = layer_norm_backward(
        &d_ln1_out,
        &cache.ln1,
        &p.ln1_scale,
        &mut g.ln1_scale,
        &mut g.ln1_shift,
    );

    let mut dx = d_res1;
    for (a, b) in dx.data.iter_mut().zip(d_x_ln.data.iter()) {
        *a += b;
    }
    dx
}

/// Backward pass from an explicit gradient on the reconstruction matrix.
pub(crate) fn backward_from_recon_grad(
    d_recon: &Mat,
    sample: &SampleForward,
    groups: &GroupMatrix,
    params: &UmaeParams,
) -> UmaeParams {
    let dims = params.dims;
    let d = dims.latent_dim;
    let bands = dims.bands;
    let mut grads = UmaeParams::zeros(dims);

    // reconstruction head: recon[:,c] = H_out · z_out[:, masked[c]]
    let mut d_z = Mat::zeros(d, bands);
    for (c, &b) in sample.masked.iter().enumerate() {
        for r in 0..dims.group_rows {
            let dr = d_recon.at(r, c);
            if dr == 0.0 {
                continue;
            }
            for j in 0..d {
                let hv = grads.h_out.at(r, j) + dr * sample.dec_cache.z_out.at(j, b);
                grads.h_out.set(r, j, hv);
                let zv = d_z.at(j, b) + params.h_out.at(r, j) * dr;
                d_z.set(j, b, zv);
            }
        }
    }

    // decoder stack
    for (cache, (pb, gb)) in sample.dec_cache.blocks.iter().rev().zip(
        params
            .decoder_blocks
            .iter()
            .rev()
            .zip(grads.decoder_blocks.iter_mut().rev()),
    ) {
        d_z = block_backward(&d_z, cache, pb, gb, dims.n_heads);
    }

    // decoder input assembly
    let mut d_l = Mat::zeros(d, sample.visible.len());
    for (j, &b) in sample.visible.iter().enumerate() {
        let l_col = sample.l_tokens.col(j);
        for r in 0..d {
            let dz = d_z.at(r, b);
            grads.s_g_dec.set(r, b, grads.s_g_dec.at(r, b) + dz);
            for c in 0..d {
                let uv = grads.u_proj.at(r, c) + dz * l_col[c];
                grads.u_proj.set(r, c, uv);
            }
        }
        for c in 0..d {
            let mut s = 0.0;
            for r in 0..d {
                s += params.u_proj.at(r, c) * d_z.at(r, b);
            }
            d_l.set(c, j, s);
        }
    }
    for &b in &sample.masked {
        for r in 0..d {
            let dz = d_z.at(r, b);
            grads.mask_token[r] += dz;
            grads.s_g_dec.set(r, b, grads.s_g_dec.at(r, b) + dz);
        }
    }

    // encoder stack
    let mut d_tokens = d_l;
    for (cache, (pb, gb)) in sample.enc_caches.iter().rev().zip(
        params
            .encoder_blocks
            .iter()
            .rev()
            .zip(grads.encoder_blocks.iter_mut().rev()),
    ) {
        d_tokens = block_backward(&d_tokens, cache, pb, gb, dims.n_heads);
    }

    // tokenization: M_pos[:,b] = W·V_G[:,b] + s_G[:,b], only visible bands
    // carry gradient
    for (j, &b) in sample.visible.iter().enumerate() {
        for r in 0..d {
            let dm = d_tokens.at(r, j);
            grads.s_g.set(r, b, grads.s_g.at(r, b) + dm);
            if dm == 0.0 {
                continue;
            }
            for c in 0..dims.group_rows {
                let wv = grads.w_proj.at(r, c) + dm * groups.matrix.at(c, b);
                grads.w_proj.set(r, c, wv);
            }
        }
    }

    grads
}

/// Gradient of [`crate::umae::mse_masked`] with respect to every parameter.
pub fn backward(
    sample: &SampleForward,
    groups: &GroupMatrix,
    params: &UmaeParams,
) -> UmaeParams {
    let n_masked = sample.masked.len();
    let rows = params.dims.group_rows;
    let scale = 2.0 / (rows * n_masked) as f64;
    let mut d_recon = Mat::zeros(rows, n_masked);
    for (c, &b) in sample.masked.iter().enumerate() {
        for r in 0..rows {
            d_recon.set(
                r,
                c,
                scale * (sample.recon.at(r, c) - groups.matrix.at(r, b)),
            );
        }
    }
    backward_from_recon_grad(&d_recon, sample, groups, params)
}

/// One training sample: forward with a freshly drawn mask, then backward.
pub fn sample_loss_and_grads(
    groups: &GroupMatrix,
    params: &UmaeParams,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, UmaeParams)> {
    let sample = crate::umae::sample_forward(groups, params, mask_ratio, rng)?;
    let grads = backward(&sample, groups, params);
    Ok((sample.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::HsiCube;
    use crate::umae::forward::{
        decoder_forward_cached, encoder_forward_cached, mask_tokens, mse_masked, tokenize,
    };
    use crate::umae::{build_groups, TrainConfig};
    use rand::{Rng, SeedableRng};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            latent_dim: 4,
            enc_depth: 1,
            dec_depth: 1,
            n_heads: 2,
            mlp_ratio: 2,
            patch: 3,
            group_len: 3,
            mask_ratio: 0.5,
            ..TrainConfig::default()
        }
    }

    fn random_groups(bands: usize, seed: u64) -> GroupMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..9 * bands).map(|_| rng.gen::<f64>()).collect();
        let patch = HsiCube::new(3, 3, bands, data).unwrap();
        build_groups(&patch, 3).unwrap()
    }

    /// loss with a fixed visible/masked split, re-deriving activations from
    /// the (possibly perturbed) parameters
    fn loss_fixed_mask(
        groups: &GroupMatrix,
        params: &UmaeParams,
        visible: &[usize],
        masked: &[usize],
    ) -> f64 {
        let m_pos = tokenize(groups, params).unwrap();
        let mut enc_in = Mat::zeros(m_pos.rows, visible.len());
        for (j, &b) in visible.iter().enumerate() {
            for r in 0..m_pos.rows {
                enc_in.set(r, j, m_pos.at(r, b));
            }
        }
        let (l, _) = encoder_forward_cached(&enc_in, params).unwrap();
        let (recon, _) = decoder_forward_cached(&l, visible, masked, params).unwrap();
        mse_masked(&recon, &groups.matrix, masked).unwrap()
    }

    fn forward_fixed_mask(
        groups: &GroupMatrix,
        params: &UmaeParams,
        visible: &[usize],
        masked: &[usize],
    ) -> SampleForward {
        let m_pos = tokenize(groups, params).unwrap();
        let mut enc_in = Mat::zeros(m_pos.rows, visible.len());
        for (j, &b) in visible.iter().enumerate() {
            for r in 0..m_pos.rows {
                enc_in.set(r, j, m_pos.at(r, b));
            }
        }
        let (l, enc_caches) = encoder_forward_cached(&enc_in, params).unwrap();
        let (recon, dec_cache) = decoder_forward_cached(&l, visible, masked, params).unwrap();
        let loss = mse_masked(&recon, &groups.matrix, masked).unwrap();
        SampleForward {
            m_pos,
            visible: visible.to_vec(),
            masked: masked.to_vec(),
            enc_input: enc_in,
            enc_caches,
            l_tokens: l,
            dec_cache,
            recon,
            loss,
        }
    }

    /// Central finite differences over every parameter scalar; panics with
    /// the offending tensor name if the relative error exceeds `tol`.
    pub(crate) fn run_gradient_check(bands: usize, seed: u64, tol: f64) -> f64 {
        let cfg = tiny_config();
        let mut params = UmaeParams::init(&cfg, bands, seed).unwrap();
        let groups = random_groups(bands, seed ^ 0xABCD);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let m_pos = tokenize(&groups, &params).unwrap();
        let (_, visible, masked) = mask_tokens(&m_pos, cfg.mask_ratio, &mut rng);

        let sample = forward_fixed_mask(&groups, &params, &visible, &masked);
        let grads = backward(&sample, &groups, &params);
        let names = params.tensor_names();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();

        let h = 1e-5;
        let mut worst = 0.0f64;
        let n_tensors = analytic.len();
        for ti in 0..n_tensors {
            let len = analytic[ti].len();
            for i in 0..len {
                let orig = params.tensors()[ti][i];
                params.tensors_mut()[ti][i] = orig + h;
                let lp = loss_fixed_mask(&groups, &params, &visible, &masked);
                params.tensors_mut()[ti][i] = orig - h;
                let lm = loss_fixed_mask(&groups, &params, &visible, &masked);
                params.tensors_mut()[ti][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[ti][i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
                if rel > worst {
                    worst = rel;
                }
                assert!(
                    rel <= tol,
                    "gradient mismatch in {}[{}]: analytic {an} vs fd {fd} (rel {rel})",
                    names[ti],
                    i
                );
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let worst = run_gradient_check(8, 1, 1e-4);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn deeper_stacks_chain_correctly() {
        // spot-check the multi-block chain rule: sampled scalars across a
        // depth 2+2 model against central differences
        let cfg = TrainConfig {
            latent_dim: 4,
            enc_depth: 2,
            dec_depth: 2,
            n_heads: 2,
            mlp_ratio: 2,
            patch: 3,
            group_len: 3,
            mask_ratio: 0.5,
            ..TrainConfig::default()
        };
        let mut params = UmaeParams::init(&cfg, 6, 21).unwrap();
        let groups = random_groups(6, 22);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let m_pos = tokenize(&groups, &params).unwrap();
        let (_, visible, masked) = mask_tokens(&m_pos, cfg.mask_ratio, &mut rng);
        let sample = forward_fixed_mask(&groups, &params, &visible, &masked);
        let grads = backward(&sample, &groups, &params);
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();

        let h = 1e-5;
        let mut pick = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        for _ in 0..60 {
            let ti = pick.gen_range(0..analytic.len());
            if analytic[ti].is_empty() {
                continue;
            }
            let i = pick.gen_range(0..analytic[ti].len());
            let orig = params.tensors()[ti][i];
            params.tensors_mut()[ti][i] = orig + h;
            let lp = loss_fixed_mask(&groups, &params, &visible, &masked);
            params.tensors_mut()[ti][i] = orig - h;
            let lm = loss_fixed_mask(&groups, &params, &visible, &masked);
            params.tensors_mut()[ti][i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[ti][i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
            assert!(rel <= 1e-4, "depth-2 gradient mismatch: {an} vs {fd}");
        }
    }

    #[test]
    fn masked_positional_encoding_columns_get_zero_gradient() {
        let cfg = tiny_config();
        let params = UmaeParams::init(&cfg, 8, 2).unwrap();
        let groups = random_groups(8, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let sample = crate::umae::sample_forward(&groups, &params, 0.5, &mut rng).unwrap();
        let grads = backward(&sample, &groups, &params);
        for &b in &sample.masked {
            for r in 0..4 {
                assert_eq!(
                    grads.s_g.at(r, b),
                    0.0,
                    "encoder positional encoding of a masked band received gradient"
                );
            }
        }
        // every visible column must carry some gradient signal somewhere
        let any_nonzero = sample
            .visible
            .iter()
            .any(|&b| (0..4).any(|r| grads.s_g.at(r, b) != 0.0));
        assert!(any_nonzero);
    }

    #[test]
    fn doubling_upstream_gradient_doubles_everything() {
        let cfg = tiny_config();
        let params = UmaeParams::init(&cfg, 8, 5).unwrap();
        let groups = random_groups(8, 6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let sample = crate::umae::sample_forward(&groups, &params, 0.5, &mut rng).unwrap();

        let base = backward(&sample, &groups, &params);
        let scale = 2.0 / (params.dims.group_rows * sample.masked.len()) as f64;
        let mut d_recon = Mat::zeros(params.dims.group_rows, sample.masked.len());
        for (c, &b) in sample.masked.iter().enumerate() {
            for r in 0..params.dims.group_rows {
                d_recon.set(
                    r,
                    c,
                    2.0 * scale * (sample.recon.at(r, c) - groups.matrix.at(r, b)),
                );
            }
        }
        let doubled = backward_from_recon_grad(&d_recon, &sample, &groups, &params);
        for (b, d) in base.tensors().into_iter().zip(doubled.tensors()) {
            for (&x, &y) in b.iter().zip(d.iter()) {
                assert!(
                    (2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()),
                    "gradient not linear in the upstream gradient"
                );
            }
        }
    }
}
