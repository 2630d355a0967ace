//! Binary cube/label formats, band normalization, reflection padding.
//!
//! Cube file (`DSC1`): 4-byte magic, then H, W, B as 32-bit LE unsigned
//! integers, then H·W·B 32-bit LE floats in pixel-major order (for each row,
//! for each column, B consecutive band values).
//!
//! Label file (`DSL1`): 4-byte magic, H, W as 32-bit LE unsigned integers,
//! then H·W 16-bit LE unsigned labels, 0 = unlabeled.
//!
//! All in-memory computation is f64; files store f32 (f64 values are
//! truncated on save, so save/load is the identity exactly on
//! f32-representable data, which covers everything this pipeline writes).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const CUBE_MAGIC: &[u8; 4] = b"DSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"DSL1";

/// Dense H×W×B image cube, pixel-major: index (row, col, band) maps to
/// `(row*W + col)*B + band`. Holds the raw HSI, PCA false-color images and
/// latent feature maps alike.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::param("cube dimensions must be positive"));
        }
        if data.len() != height * width * bands {
            return Err(Error::contract(format!(
                "cube data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                bands
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HsiCube {
            height,
            width,
            bands,
            data: vec![0.0; height * width * bands],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, v: f64) {
        self.data[(row * self.width + col) * self.bands + band] = v;
    }

    /// Spectrum of the pixel at raster index `row*W + col`.
    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.bands..(index + 1) * self.bands]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel integer labels; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("mask dimensions must be positive"));
        }
        if labels.len() != height * width {
            return Err(Error::contract(format!(
                "label length {} does not match {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(LabelMask {
            height,
            width,
            labels,
        })
    }

    /// Number of ground-truth classes = maximum label value.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(offset, format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, offset: u64, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, offset, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0, "magic")?;
    if &magic != CUBE_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"DSC1\"", magic)));
    }
    let h = read_u32(&mut r, 4, "height")? as usize;
    let w = read_u32(&mut r, 8, "width")? as usize;
    let b = read_u32(&mut r, 12, "bands")? as usize;
    if h == 0 {
        return Err(Error::format(4, "zero height"));
    }
    if w == 0 {
        return Err(Error::format(8, "zero width"));
    }
    if b == 0 {
        return Err(Error::format(12, "zero band count"));
    }

    let n = h * w * b;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(16, format!("truncated payload, expected {} floats", n)))?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HsiCube::new(h, w, b, data)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(CUBE_MAGIC).map_err(io_err)?;
    w.write_all(&(cube.height as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(cube.width as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(cube.bands as u32).to_le_bytes()).map_err(io_err)?;
    let mut buf = Vec::with_capacity(cube.data.len() * 4);
    for &v in &cube.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0, "magic")?;
    if &magic != LABEL_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"DSL1\"", magic)));
    }
    let h = read_u32(&mut r, 4, "height")? as usize;
    let w = read_u32(&mut r, 8, "width")? as usize;
    if h == 0 {
        return Err(Error::format(4, "zero height"));
    }
    if w == 0 {
        return Err(Error::format(8, "zero width"));
    }

    let n = h * w;
    let mut payload = vec![0u8; n * 2];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(12, format!("truncated payload, expected {} labels", n)))?;
    let labels: Vec<u16> = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMask::new(h, w, labels)
}

pub fn save_labels(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(LABEL_MAGIC).map_err(io_err)?;
    w.write_all(&(mask.height as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(mask.width as u32).to_le_bytes()).map_err(io_err)?;
    let mut buf = Vec::with_capacity(mask.labels.len() * 2);
    for &l in &mask.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

/// Rescale each band to [0,1] over the whole scene: (x - min) / (max - min).
/// Constant bands map to 0.
pub fn normalize_bands(cube: &HsiCube) -> HsiCube {
    let b = cube.bands;
    let mut mins = vec![f64::INFINITY; b];
    let mut maxs = vec![f64::NEG_INFINITY; b];
    for px in 0..cube.n_pixels() {
        for (band, &v) in cube.pixel(px).iter().enumerate() {
            if v < mins[band] {
                mins[band] = v;
            }
            if v > maxs[band] {
                maxs[band] = v;
            }
        }
    }
    let mut out = cube.clone();
    for px in 0..cube.n_pixels() {
        for band in 0..b {
            let i = px * b + band;
            let range = maxs[band] - mins[band];
            out.data[i] = if range > 0.0 {
                (cube.data[i] - mins[band]) / range
            } else {
                0.0
            };
        }
    }
    out
}

/// Mirror index `i` into [0, n) excluding the edge sample from the
/// reflection: ..., 2, 1, | 0, 1, ..., n-1, | n-2, n-3, ...
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Pad the cube by (p-1)/2 pixels on every spatial side using edge-exclusive
/// reflection, so a p×p patch exists around every original pixel.
pub fn pad_reflect(cube: &HsiCube, p: usize) -> Result<HsiCube> {
    if p == 0 || p % 2 == 0 {
        return Err(Error::param(format!("pad size p must be odd and positive, got {p}")));
    }
    let pad = (p - 1) / 2;
    let (h, w, b) = (cube.height, cube.width, cube.bands);
    let mut out = HsiCube::zeros(h + 2 * pad, w + 2 * pad, b);
    for row in 0..out.height {
        let src_row = mirror(row as isize - pad as isize, h);
        for col in 0..out.width {
            let src_col = mirror(col as isize - pad as isize, w);
            let src = (src_row * w + src_col) * b;
            let dst = (row * out.width + col) * b;
            out.data[dst..dst + b].copy_from_slice(&cube.data[src..src + b]);
        }
    }
    Ok(out)
}

/// Flatten to an HW×B matrix in raster order (row index = row*W + col).
pub fn flatten(cube: &HsiCube) -> Mat {
    Mat {
        rows: cube.n_pixels(),
        cols: cube.bands,
        data: cube.data.clone(),
    }
}

/// Inverse of [`flatten`] given the spatial dimensions.
pub fn unflatten(mat: &Mat, height: usize, width: usize) -> Result<HsiCube> {
    if mat.rows != height * width {
        return Err(Error::contract(format!(
            "matrix with {} rows cannot reshape to {}x{}",
            mat.rows, height, width
        )));
    }
    HsiCube::new(height, width, mat.cols, mat.data.clone())
}
