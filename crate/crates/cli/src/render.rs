//! Label-map rendering to binary PPM (P6) with a fixed categorical
//! palette, so golden outputs are bit-exact without an image dependency.

use std::path::Path;

use ds2dl_core::io::LabelMask;
use ds2dl_core::{Error, Result};

/// 16 well-separated categorical colors; label 0 renders black and labels
/// wrap modulo the palette length.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [255, 225, 25],  // yellow
    [0, 130, 200],   // blue
    [245, 130, 48],  // orange
    [145, 30, 180],  // purple
    [70, 240, 240],  // cyan
    [240, 50, 230],  // magenta
    [210, 245, 60],  // lime
    [250, 190, 212], // pink
    [0, 128, 128],   // teal
    [220, 190, 255], // lavender
    [170, 110, 40],  // brown
    [255, 250, 200], // beige
    [128, 0, 0],     // maroon
    [170, 255, 195], // mint
];

pub fn render_ppm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.reserve(mask.labels.len() * 3);
    for &label in &mask.labels {
        if label == 0 {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            out.extend_from_slice(&PALETTE[((label - 1) as usize) % PALETTE.len()]);
        }
    }
    out
}

pub fn write_ppm(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_ppm(mask)).map_err(|e| Error::io(path.display().to_string(), e))
}
