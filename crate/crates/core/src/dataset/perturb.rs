//! Frame-level perturbations used by the robustness evaluation.
//!
//! All filters replicate edge pixels at the borders and work in `f64` before
//! rounding back to 8-bit. None of them change frame count or resolution.

use std::fmt;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Identity,
    /// Unsharp-mask detail enhancement: `x + amount * (x - gauss(x))` with a
    /// 5-tap, sigma 1 Gaussian.
    Detail { amount: f64 },
    GaussianBlur { sigma: f64, kernel: usize },
    BoxBlur { kernel: usize },
    Median { kernel: usize },
    /// Removes `fraction` of the width and height from every side, then
    /// rescales the center back to the original size.
    Crop { fraction: f64 },
}

impl Perturbation {
    /// Short name used in reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Identity => "original",
            Perturbation::Detail { .. } => "detail",
            Perturbation::GaussianBlur { .. } => "gaussian_blur",
            Perturbation::BoxBlur { .. } => "box_blur",
            Perturbation::Median { .. } => "median",
            Perturbation::Crop { .. } => "crop",
        }
    }

    /// Builds a perturbation by name with the given magnitudes.
    pub fn from_name(name: &str, kernel: usize, sigma: f64, crop: f64, detail: f64) -> Result<Self> {
        let p = match name {
            "original" | "identity" | "none" => Perturbation::Identity,
            "detail" => Perturbation::Detail { amount: detail },
            "gaussian_blur" | "gaussian" => Perturbation::GaussianBlur { sigma, kernel },
            "box_blur" | "blur" => Perturbation::BoxBlur { kernel },
            "median" => Perturbation::Median { kernel },
            "crop" => Perturbation::Crop { fraction: crop },
            other => return Err(Error::invalid(format!("unknown perturbation {other:?}"))),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |k: usize| {
            if k >= 3 && k % 2 == 1 {
                Ok(())
            } else {
                Err(Error::invalid(format!("kernel size {k} must be odd and at least 3")))
            }
        };
        match *self {
            Perturbation::Identity => Ok(()),
            Perturbation::Detail { amount } if amount > 0.0 && amount <= 4.0 => Ok(()),
            Perturbation::Detail { amount } => {
                Err(Error::invalid(format!("detail amount {amount} outside (0, 4]")))
            }
            Perturbation::GaussianBlur { sigma, kernel } => {
                odd(kernel)?;
                if sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("gaussian sigma {sigma} must be positive")))
                }
            }
            Perturbation::BoxBlur { kernel } | Perturbation::Median { kernel } => odd(kernel),
            Perturbation::Crop { fraction } if fraction > 0.0 && fraction <= 0.5 => Ok(()),
            Perturbation::Crop { fraction } => {
                Err(Error::invalid(format!("crop fraction {fraction} outside (0, 0.5]")))
            }
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Applies `kind` to every frame.
pub fn perturb(frames: &[RgbImage], kind: &Perturbation) -> Result<Vec<RgbImage>> {
    kind.validate()?;
    frames.par_iter().map(|f| perturb_frame(f, kind)).collect()
}

pub fn perturb_frame(frame: &RgbImage, kind: &Perturbation) -> Result<RgbImage> {
    Ok(match *kind {
        Perturbation::Identity => frame.clone(),
        Perturbation::Detail { amount } => {
            let smooth = convolve_separable(frame, &gaussian_kernel(1.0, 5));
            let src = to_planes(frame);
            let planes = src
                .iter()
                .zip(&smooth)
                .map(|(x, s)| x.iter().zip(s).map(|(&x, &s)| x + amount * (x - s)).collect())
                .collect::<Vec<Vec<f64>>>();
            from_planes(frame.width(), frame.height(), &planes)
        }
        Perturbation::GaussianBlur { sigma, kernel } => {
            let planes = convolve_separable(frame, &gaussian_kernel(sigma, kernel));
            from_planes(frame.width(), frame.height(), &planes)
        }
        Perturbation::BoxBlur { kernel } => {
            let planes = convolve_separable(frame, &vec![1.0 / kernel as f64; kernel]);
            from_planes(frame.width(), frame.height(), &planes)
        }
        Perturbation::Median { kernel } => median(frame, kernel),
        Perturbation::Crop { fraction } => crop(frame, fraction)?,
    })
}

/// Normalized 1-D Gaussian taps, centered.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn to_planes(img: &RgbImage) -> Vec<Vec<f64>> {
    (0..3)
        .map(|c| img.pixels().map(|p| p.0[c] as f64).collect())
        .collect()
}

fn from_planes(w: u32, h: u32, planes: &[Vec<f64>]) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) as usize;
        Rgb([0, 1, 2].map(|c| planes[c][i].round().clamp(0.0, 255.0) as u8))
    })
}

fn convolve_separable(img: &RgbImage, taps: &[f64]) -> Vec<Vec<f64>> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = (taps.len() / 2) as i64;
    to_planes(img)
        .into_iter()
        .map(|plane| {
            let mut tmp = vec![0.0; plane.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (i, t) in taps.iter().enumerate() {
                        let sx = (x + i as i64 - r).clamp(0, w - 1);
                        acc += t * plane[(y * w + sx) as usize];
                    }
                    tmp[(y * w + x) as usize] = acc;
                }
            }
            let mut out = vec![0.0; plane.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (i, t) in taps.iter().enumerate() {
                        let sy = (y + i as i64 - r).clamp(0, h - 1);
                        acc += t * tmp[(sy * w + x) as usize];
                    }
                    out[(y * w + x) as usize] = acc;
                }
            }
            out
        })
        .collect()
}

fn median(img: &RgbImage, kernel: usize) -> RgbImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = (kernel / 2) as i64;
    let mut window = Vec::with_capacity(kernel * kernel);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let sx = (x as i64 + dx).clamp(0, w - 1) as u32;
                    let sy = (y as i64 + dy).clamp(0, h - 1) as u32;
                    window.push(img.get_pixel(sx, sy).0[c]);
                }
            }
            window.sort_unstable();
            *out = window[window.len() / 2];
        }
        Rgb(px)
    })
}

/// Integer border removed from a side of length `len` by `crop(fraction)`.
pub fn crop_border(len: u32, fraction: f64) -> u32 {
    (fraction * len as f64).round() as u32
}

fn crop(img: &RgbImage, fraction: f64) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let (bx, by) = (crop_border(w, fraction), crop_border(h, fraction));
    if 2 * bx >= w || 2 * by >= h {
        return Err(Error::invalid(format!(
            "crop fraction {fraction} leaves nothing of a {w}x{h} frame"
        )));
    }
    let region = image::imageops::crop_imm(img, bx, by, w - 2 * bx, h - 2 * by).to_image();
    Ok(resize_bilinear(&region, w, h))
}

/// Bilinear sample at continuous pixel-center coordinates, clamped to the image.
#[inline]
pub(crate) fn sample_bilinear(img: &RgbImage, sx: f64, sy: f64) -> [f64; 3] {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let sx = sx.clamp(0.0, w - 1.0);
    let sy = sy.clamp(0.0, h - 1.0);
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let p = |x, y| img.get_pixel(x, y).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    [0, 1, 2].map(|k| {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn resize_bilinear(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    RgbImage::from_fn(w, h, |x, y| {
        let v = sample_bilinear(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
        Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}
