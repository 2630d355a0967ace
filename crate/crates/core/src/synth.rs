//! Seeded synthetic scene generator: spatially contiguous class regions
//! (Voronoi cells of random seed pixels), smooth per-class spectral
//! signatures, additive Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{HsiCube, LabelMask};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cube: HsiCube,
    pub labels: LabelMask,
    /// class signatures, classes × bands
    pub signatures: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0,1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn smooth_signature(bands: usize, base: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut sig = vec![base; bands];
    for harmonic in 1..=3 {
        let amp = rng.gen_range(0.05..0.18) / harmonic as f64;
        let freq = rng.gen_range(0.5..3.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (b, s) in sig.iter_mut().enumerate() {
            let x = b as f64 / bands as f64;
            *s += amp * (std::f64::consts::TAU * freq * x + phase).sin();
        }
    }
    sig
}

fn signature_distance(a: &[f64], b: &[f64]) -> f64 {
    crate::numerics::squared_distance(a, b).sqrt()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthScene> {
    let (h, w, b) = (cfg.height, cfg.width, cfg.bands);
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::param("scene dimensions must be positive"));
    }
    if cfg.classes == 0 || cfg.classes > h * w {
        return Err(Error::param(format!(
            "class count {} out of range 1..={}",
            cfg.classes,
            h * w
        )));
    }
    if cfg.noise < 0.0 {
        return Err(Error::param("noise level must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // class signatures: distinct base brightness per class (materials
    // differ in albedo, not just spectral shape) plus smooth random
    // harmonics, with enforced pairwise separation
    let min_sep = 0.12 * (b as f64).sqrt();
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    for class in 0..cfg.classes {
        let base = if cfg.classes == 1 {
            0.5
        } else {
            0.25 + 0.5 * class as f64 / (cfg.classes - 1) as f64
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _attempt in 0..200 {
            let cand = smooth_signature(b, base, &mut rng);
            let sep = signatures
                .iter()
                .map(|s| signature_distance(s, &cand))
                .fold(f64::INFINITY, f64::min);
            if sep >= min_sep {
                best = Some((sep, cand));
                break;
            }
            if best.as_ref().map_or(true, |(s, _)| sep > *s) {
                best = Some((sep, cand));
            }
        }
        signatures.push(best.unwrap().1);
    }

    // contiguous, roughly equal-sized class regions: seeded multi-source
    // growth with a per-class capacity (plain Voronoi cells of random seeds
    // can vary 5x in size, which makes downstream evaluation lopsided)
    let mut seeds: Vec<(usize, usize)> = Vec::with_capacity(cfg.classes);
    while seeds.len() < cfg.classes {
        let p = (rng.gen_range(0..h), rng.gen_range(0..w));
        if !seeds.contains(&p) {
            seeds.push(p);
        }
    }
    let mut labels = vec![0u16; h * w];
    let capacity = (h * w).div_ceil(cfg.classes);
    let mut counts = vec![0usize; cfg.classes];
    let mut frontiers: Vec<std::collections::VecDeque<usize>> = seeds
        .iter()
        .map(|&(r, c)| std::collections::VecDeque::from([r * w + c]))
        .collect();
    let mut assigned = 0usize;
    while assigned < h * w {
        let mut progressed = false;
        for class in 0..cfg.classes {
            if counts[class] >= capacity {
                continue;
            }
            while let Some(px) = frontiers[class].pop_front() {
                if labels[px] != 0 {
                    continue;
                }
                labels[px] = (class + 1) as u16;
                counts[class] += 1;
                assigned += 1;
                progressed = true;
                let (r, c) = (px / w, px % w);
                if r > 0 {
                    frontiers[class].push_back(px - w);
                }
                if r + 1 < h {
                    frontiers[class].push_back(px + w);
                }
                if c > 0 {
                    frontiers[class].push_back(px - 1);
                }
                if c + 1 < w {
                    frontiers[class].push_back(px + 1);
                }
                break;
            }
        }
        if !progressed {
            // capacities hit with pixels left (or frontiers exhausted):
            // let any class absorb its remaining frontier
            for class in 0..cfg.classes {
                while let Some(px) = frontiers[class].pop_front() {
                    if labels[px] != 0 {
                        continue;
                    }
                    labels[px] = (class + 1) as u16;
                    counts[class] += 1;
                    assigned += 1;
                    progressed = true;
                    let (r, c) = (px / w, px % w);
                    if r > 0 {
                        frontiers[class].push_back(px - w);
                    }
                    if r + 1 < h {
                        frontiers[class].push_back(px + w);
                    }
                    if c > 0 {
                        frontiers[class].push_back(px - 1);
                    }
                    if c + 1 < w {
                        frontiers[class].push_back(px + 1);
                    }
                    break;
                }
                if progressed {
                    break;
                }
            }
            if !progressed {
                return Err(Error::numeric(
                    "region growth stalled; disconnected frontier state",
                ));
            }
        }
    }

    let mut data = vec![0.0f64; h * w * b];
    for px in 0..h * w {
        let sig = &signatures[(labels[px] - 1) as usize];
        for band in 0..b {
            let noise = if cfg.noise > 0.0 {
                cfg.noise * gaussian(&mut rng)
            } else {
                0.0
            };
            // store as f32 so saved files round-trip bit-exactly
            data[px * b + band] = (sig[band] + noise) as f32 as f64;
        }
    }

    Ok(SynthScene {
        cube: HsiCube::new(h, w, b, data)?,
        labels: LabelMask::new(h, w, labels)?,
        signatures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = SynthConfig {
            height: 12,
            width: 10,
            bands: 8,
            classes: 3,
            noise: 0.05,
            seed: 7,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn zero_noise_constant_within_class() {
        let cfg = SynthConfig {
            height: 8,
            width: 8,
            bands: 6,
            classes: 2,
            noise: 0.0,
            seed: 3,
        };
        let scene = generate(&cfg).unwrap();
        for px in 0..64 {
            let class = scene.labels.labels[px];
            for q in (px + 1)..64 {
                if scene.labels.labels[q] == class {
                    assert_eq!(scene.cube.pixel(px), scene.cube.pixel(q));
                }
            }
        }
    }

    #[test]
    fn single_class_uniform_mask() {
        let cfg = SynthConfig {
            height: 5,
            width: 5,
            bands: 4,
            classes: 1,
            noise: 0.1,
            seed: 1,
        };
        let scene = generate(&cfg).unwrap();
        assert!(scene.labels.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn regions_are_connected() {
        let cfg = SynthConfig {
            height: 30,
            width: 30,
            bands: 4,
            classes: 5,
            noise: 0.0,
            seed: 11,
        };
        let scene = generate(&cfg).unwrap();
        let seg = crate::superpixel::SuperpixelSegmentation {
            height: 30,
            width: 30,
            n_segments: 5,
            labels: scene.labels.labels.iter().map(|&l| l as u32).collect(),
        };
        assert!(crate::superpixel::segments_are_connected(&seg));
    }
}
