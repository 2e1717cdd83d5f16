//! Fixed per-frame descriptor: a coarse luminance layout plus color histograms.

use image::RgbImage;

use crate::error::{Error, Result};

/// Side of the luminance grid.
pub const GRID: usize = 8;
/// Histogram bins per color channel.
pub const BINS: usize = 16;
pub const DESCRIPTOR_DIM: usize = GRID * GRID + 3 * BINS;

/// Rec. 601 luma in `[0, 1]`.
#[inline]
pub fn luma(p: [u8; 3]) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

/// Block-mean luminance over a `GRID x GRID` partition (row-major), followed
/// by normalized `BINS`-bin histograms of R, G and B.
pub fn extract_descriptor(frame: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if w < GRID || h < GRID {
        return Err(Error::shape(format!(
            "frame {w}x{h} is smaller than the {GRID}x{GRID} descriptor grid"
        )));
    }
    let mut sums = [0.0f64; GRID * GRID];
    let mut counts = [0usize; GRID * GRID];
    let mut hist = [[0usize; BINS]; 3];
    for (x, y, px) in frame.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        let cell = (y * GRID / h) * GRID + x * GRID / w;
        sums[cell] += luma(px.0);
        counts[cell] += 1;
        for (c, &v) in px.0.iter().enumerate() {
            hist[c][v as usize * BINS / 256] += 1;
        }
    }
    let total = (w * h) as f64;
    let mut out = Vec::with_capacity(DESCRIPTOR_DIM);
    out.extend(sums.iter().zip(&counts).map(|(s, &n)| s / n as f64));
    for channel in &hist {
        out.extend(channel.iter().map(|&n| n as f64 / total));
    }
    Ok(out)
}
