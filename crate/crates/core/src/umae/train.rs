//! Pretraining loop (Adam over seeded shuffled mini-batches with per-epoch
//! mask resampling) and whole-scene latent extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{flatten, pad_reflect, HsiCube};
use crate::numerics::pca;
use crate::umae::{
    build_groups, extract_patch, fps_select, sample_loss_and_grads, tokenize, GroupMatrix,
    TrainConfig, UmaeParams,
};

/// Samples per parallel work unit; fixed so that gradient reduction order
/// (and therefore the trained parameters) is independent of thread count.
const PAR_CHUNK: usize = 8;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent deterministic stream for (seed, purpose, a, b).
fn derive_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(
        seed ^ splitmix(tag ^ splitmix(a ^ splitmix(b))),
    ))
}

const TAG_INIT: u64 = 0x11;
const TAG_SHUFFLE: u64 = 0x22;
const TAG_MASK: u64 = 0x33;

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: UmaeParams,
    /// Mean masked MSE per epoch.
    pub loss_log: Vec<f64>,
    /// Raster indices of the pixels selected for training.
    pub training_pixels: Vec<usize>,
}

struct AdamState {
    m: UmaeParams,
    v: UmaeParams,
    step: u64,
}

impl AdamState {
    fn new(template: &UmaeParams) -> Self {
        AdamState {
            m: UmaeParams::zeros(template.dims),
            v: UmaeParams::zeros(template.dims),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut UmaeParams, grads: &UmaeParams, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = cfg.adam_beta1;
        let b2 = cfg.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = cfg.learning_rate;
        let eps = cfg.adam_eps;
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let mut v_all = self.v.tensors_mut();
        let p_all = params.tensors_mut();
        for (((p, g), m), v) in p_all
            .into_iter()
            .zip(g_all)
            .zip(m_all)
            .zip(v_all.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }
}

/// Precompute the group matrix of every training pixel.
fn training_groups(
    cube: &HsiCube,
    pixels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<GroupMatrix>> {
    let padded = pad_reflect(cube, config.patch)?;
    pixels
        .iter()
        .map(|&px| {
            let (r, c) = (px / cube.width, px % cube.width);
            let patch = extract_patch(&padded, r, c, config.patch);
            let mut g = build_groups(&patch, config.group_len)?;
            g.source_pixel = Some(px);
            Ok(g)
        })
        .collect()
}

/// Pretrain on FPS-selected pixels of a normalized cube.
pub fn train(cube: &HsiCube, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let hw = cube.n_pixels();
    if config.n_t > hw {
        return Err(Error::param(format!(
            "n_t={} exceeds pixel count {hw}",
            config.n_t
        )));
    }
    if config.k_visible(cube.bands) >= cube.bands {
        return Err(Error::param(
            "mask ratio leaves no masked bands; increase mask_ratio",
        ));
    }

    // 20-component PCA features drive the farthest point sampling
    let flat = flatten(cube);
    let n_comp = 20.min(cube.bands).min(hw - 1).max(1);
    let features = pca(&flat, n_comp)?;
    let training_pixels = fps_select(&features.scores, config.n_t)?;
    let groups = training_groups(cube, &training_pixels, config)?;

    let mut params = UmaeParams::init(config, cube.bands, splitmix(config.seed ^ TAG_INIT))?;
    let mut adam = AdamState::new(&params);
    let mut loss_log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..training_pixels.len()).collect();
        let mut shuffle_rng = derive_rng(config.seed, TAG_SHUFFLE, epoch as u64, 0);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            // fixed-size chunks keep the floating-point reduction order
            // identical for every thread count
            let chunk_results: Vec<Result<(f64, UmaeParams)>> = batch
                .par_chunks(PAR_CHUNK)
                .map(|chunk| {
                    let mut acc = UmaeParams::zeros(params.dims);
                    let mut loss_sum = 0.0;
                    for &pos in chunk {
                        let pixel = training_pixels[pos];
                        let mut mask_rng =
                            derive_rng(config.seed, TAG_MASK, epoch as u64, pixel as u64);
                        let (loss, grads) = sample_loss_and_grads(
                            &groups[pos],
                            &params,
                            config.mask_ratio,
                            &mut mask_rng,
                        )?;
                        loss_sum += loss;
                        acc.add_scaled(&grads, 1.0);
                    }
                    Ok((loss_sum, acc))
                })
                .collect();

            let mut batch_grads = UmaeParams::zeros(params.dims);
            let mut batch_loss = 0.0;
            for r in chunk_results {
                let (l, g) = r?;
                batch_loss += l;
                batch_grads.add_scaled(&g, 1.0);
            }
            let inv = 1.0 / batch.len() as f64;
            for t in batch_grads.tensors_mut() {
                for v in t.iter_mut() {
                    *v *= inv;
                }
            }
            epoch_loss += batch_loss;
            adam.update(&mut params, &batch_grads, config);
        }

        let mean_loss = epoch_loss / training_pixels.len() as f64;
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(Error::Train {
                epoch,
                message: format!("training diverged (mean loss {mean_loss})"),
            });
        }
        loss_log.push(mean_loss);
    }

    Ok(TrainOutcome {
        params,
        loss_log,
        training_pixels,
    })
}

/// Encode every pixel: tokenize its patch, run the encoder over all B
/// tokens unmasked, mean-pool the output tokens. The decoder is never
/// evaluated. Output is an H×W×D cube.
pub fn encode_latent(cube: &HsiCube, params: &UmaeParams) -> Result<HsiCube> {
    if cube.bands != params.dims.bands {
        return Err(Error::contract(format!(
            "cube has {} bands but the model was trained on {}",
            cube.bands, params.dims.bands
        )));
    }
    let (h, w) = (cube.height, cube.width);
    let d = params.dims.latent_dim;
    let padded = pad_reflect(cube, params.dims.patch)?;

    let latents: Vec<Result<Vec<f64>>> = (0..h * w)
        .into_par_iter()
        .map(|px| {
            let (r, c) = (px / w, px % w);
            let patch = extract_patch(&padded, r, c, params.dims.patch);
            let groups = build_groups(&patch, params.dims.group_len)?;
            let m_pos = tokenize(&groups, params)?;
            let tokens = crate::umae::encoder_forward(&m_pos, params)?;
            let inv = 1.0 / tokens.cols as f64;
            Ok((0..d)
                .map(|row| tokens.row(row).iter().sum::<f64>() * inv)
                .collect())
        })
        .collect();

    let mut out = HsiCube::zeros(h, w, d);
    for (px, res) in latents.into_iter().enumerate() {
        let vals = res?;
        out.data[px * d..(px + 1) * d].copy_from_slice(&vals);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene(seed: u64) -> HsiCube {
        let cfg = crate::synth::SynthConfig {
            height: 10,
            width: 10,
            bands: 8,
            classes: 3,
            noise: 0.05,
            seed,
        };
        let scene = crate::synth::generate(&cfg).unwrap();
        crate::io::normalize_bands(&scene.cube)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            n_t: 24,
            mask_ratio: 0.5,
            patch: 3,
            group_len: 3,
            latent_dim: 8,
            epochs: 3,
            enc_depth: 1,
            dec_depth: 1,
            n_heads: 2,
            mlp_ratio: 2,
            batch_size: 8,
            seed: 13,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let cube = small_scene(1);
        let mut cfg = small_config();
        cfg.epochs = 0;
        let outcome = train(&cube, &cfg).unwrap();
        let expect = UmaeParams::init(&cfg, 8, splitmix(cfg.seed ^ TAG_INIT)).unwrap();
        assert_eq!(outcome.params, expect);
        assert!(outcome.loss_log.is_empty());
    }

    #[test]
    fn training_reduces_loss() {
        let cube = small_scene(2);
        let mut cfg = small_config();
        cfg.epochs = 8;
        let outcome = train(&cube, &cfg).unwrap();
        let first = outcome.loss_log[0];
        let last = *outcome.loss_log.last().unwrap();
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let cube = small_scene(3);
        let cfg = small_config();
        let a = train(&cube, &cfg).unwrap();
        let b = train(&cube, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_log, b.loss_log);
    }

    #[test]
    fn constant_image_constant_latent() {
        let cube = HsiCube::new(6, 6, 8, vec![0.25; 6 * 6 * 8]).unwrap();
        let cfg = small_config();
        let params = UmaeParams::init(&cfg, 8, 99).unwrap();
        let latent = encode_latent(&cube, &params).unwrap();
        let first = latent.pixel(0).to_vec();
        for px in 1..36 {
            assert_eq!(latent.pixel(px), &first[..]);
        }
    }

    #[test]
    fn identical_patches_identical_latents() {
        // two-valued image with identical interior patches inside each half
        let mut cube = HsiCube::zeros(6, 8, 4);
        for r in 0..6 {
            for c in 0..8 {
                for b in 0..4 {
                    cube.set(r, c, b, if c < 4 { 0.2 } else { 0.8 });
                }
            }
        }
        let cfg = TrainConfig {
            latent_dim: 4,
            n_heads: 2,
            enc_depth: 1,
            dec_depth: 1,
            ..small_config()
        };
        let params = UmaeParams::init(&cfg, 4, 5).unwrap();
        let latent = encode_latent(&cube, &params).unwrap();
        // interior pixels of the left half share a patch
        assert_eq!(latent.pixel(1 * 8 + 1), latent.pixel(2 * 8 + 2));
    }

    #[test]
    fn latent_independent_of_decoder_params() {
        let cube = small_scene(4);
        let cfg = small_config();
        let mut params = UmaeParams::init(&cfg, 8, 42).unwrap();
        let a = encode_latent(&cube, &params).unwrap();
        // scribble over every decoder-side tensor
        params.u_proj = crate::numerics::Mat::from_vec(
            8,
            8,
            (0..64).map(|i| i as f64).collect(),
        )
        .unwrap();
        for v in params.mask_token.iter_mut() {
            *v = 9.0;
        }
        for block in params.decoder_blocks.iter_mut() {
            for t in block.w1.data.iter_mut() {
                *t = -3.0;
            }
        }
        let b = encode_latent(&cube, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn latent_shape() {
        let cube = small_scene(5);
        let cfg = small_config();
        let params = UmaeParams::init(&cfg, 8, 7).unwrap();
        let latent = encode_latent(&cube, &params).unwrap();
        assert_eq!(
            (latent.height, latent.width, latent.bands),
            (10, 10, cfg.latent_dim)
        );
    }
}
