//! Parameter checkpoint file (`DSW1`) and the loss-log CSV.
//!
//! Layout: 4-byte magic, thirteen 32-bit LE unsigned integers
//! (n_t, patch, group_len, latent_dim, epochs, enc_depth, dec_depth,
//! n_heads, mlp_ratio, batch_size, bands, seed_lo, seed_hi), five 64-bit LE
//! floats (mask_ratio, learning_rate, adam_beta1, adam_beta2, adam_eps),
//! then every parameter tensor as raw 64-bit LE floats in declaration
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::umae::{TrainConfig, UmaeParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSW1";

pub fn save_checkpoint(
    params: &UmaeParams,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    let ints: [u32; 13] = [
        config.n_t as u32,
        config.patch as u32,
        config.group_len as u32,
        config.latent_dim as u32,
        config.epochs as u32,
        config.enc_depth as u32,
        config.dec_depth as u32,
        config.n_heads as u32,
        config.mlp_ratio as u32,
        config.batch_size as u32,
        params.dims.bands as u32,
        (config.seed & 0xffff_ffff) as u32,
        (config.seed >> 32) as u32,
    ];
    for v in ints {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for v in [
        config.mask_ratio,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for tensor in params.tensors() {
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for &v in tensor {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UmaeParams, TrainConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(0, "truncated checkpoint magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:?}, expected \"DSW1\"", magic),
        ));
    }
    let mut ints = [0u32; 13];
    for (i, v) in ints.iter_mut().enumerate() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::format(4 + 4 * i as u64, "truncated checkpoint header"))?;
        *v = u32::from_le_bytes(b);
    }
    let mut reals = [0f64; 5];
    for (i, v) in reals.iter_mut().enumerate() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::format(56 + 8 * i as u64, "truncated checkpoint header"))?;
        *v = f64::from_le_bytes(b);
    }

    // size sanity before any tensor allocation
    for (i, (v, cap)) in [
        (ints[1], 255u32),    // patch
        (ints[2], 4095),      // group_len
        (ints[3], 65536),     // latent_dim
        (ints[5], 1024),      // enc_depth
        (ints[6], 1024),      // dec_depth
        (ints[8], 64),        // mlp_ratio
        (ints[10], 65536),    // bands
    ]
    .iter()
    .enumerate()
    {
        if v > cap {
            return Err(Error::format(
                4 + 4 * i as u64,
                format!("implausible header field {v} (cap {cap})"),
            ));
        }
    }
    let config = TrainConfig {
        n_t: ints[0] as usize,
        patch: ints[1] as usize,
        group_len: ints[2] as usize,
        latent_dim: ints[3] as usize,
        epochs: ints[4] as usize,
        enc_depth: ints[5] as usize,
        dec_depth: ints[6] as usize,
        n_heads: ints[7] as usize,
        mlp_ratio: ints[8] as usize,
        batch_size: ints[9] as usize,
        seed: ints[11] as u64 | ((ints[12] as u64) << 32),
        mask_ratio: reals[0],
        learning_rate: reals[1],
        adam_beta1: reals[2],
        adam_beta2: reals[3],
        adam_eps: reals[4],
    };
    config.validate()?;
    let bands = ints[10] as usize;
    if bands == 0 {
        return Err(Error::format(44, "zero band count in checkpoint"));
    }

    let dims = crate::umae::ModelDims::from_config(&config, bands);
    let mut params = UmaeParams::zeros(dims);
    let mut offset = 96u64;
    for tensor in params.tensors_mut() {
        let mut buf = vec![0u8; tensor.len() * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(offset, "truncated parameter payload"))?;
        for (v, chunk) in tensor.iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        offset += buf.len() as u64;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path.display().to_string(), e))? != 0 {
        return Err(Error::format(offset, "trailing bytes after parameters"));
    }
    Ok((params, config))
}

pub fn save_loss_log(losses: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_loss_log(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let value = line
            .split(',')
            .nth(1)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::format(0, format!("bad loss log line {}", i + 1)))?;
        out.push(value);
    }
    Ok(out)
}
