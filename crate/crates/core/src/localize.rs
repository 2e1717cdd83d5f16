//! Tamper localization by aligning the traced original to the fake and
//! differencing.
//!
//! Alignment maps a fake pixel `p` to the original at
//! `scale * (p + 0.5) - 0.5 + offset`, which is exactly the sampling grid a
//! centered crop followed by a resize back to full size produces. The search
//! runs on a coarse grid at quarter resolution, then refines around the best
//! coarse candidate at full resolution.

use image::RgbImage;
use rayon::prelude::*;

use crate::dataset::perturb::{perturb_frame, sample_bilinear};
use crate::dataset::{descriptor::luma, Mask, Perturbation};
use crate::error::{Error, Result};

pub const SCALE_MIN: f64 = 0.8;
pub const SCALE_MAX: f64 = 1.25;
pub const SCALE_STEP: f64 = 0.05;
/// Offset search half-width as a fraction of the frame size.
pub const OFFSET_FRACTION: f64 = 0.1;
/// Frame pairs used to score a candidate alignment.
pub const SCORE_FRAMES: usize = 5;
pub const DEFAULT_TAU: f64 = 0.08;
pub const DEFAULT_RADIUS: u32 = 1;
const COARSE: u32 = 4;
/// Candidates covering less than this share of the fake frame are skipped.
const MIN_COVERAGE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentSpec {
    pub scale: f64,
    /// `(dy, dx)` in original pixels.
    pub offset: (i32, i32),
    /// Mean normalized cross-correlation at this alignment.
    pub score: f64,
}

impl AlignmentSpec {
    pub const IDENTITY: AlignmentSpec = AlignmentSpec { scale: 1.0, offset: (0, 0), score: 0.0 };

    #[inline]
    fn source(&self, x: u32, y: u32) -> (f64, f64) {
        (
            self.scale * (x as f64 + 0.5) - 0.5 + self.offset.1 as f64,
            self.scale * (y as f64 + 0.5) - 0.5 + self.offset.0 as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub masks: Vec<Mask>,
}

impl MaskSequence {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Luma plane in `[0, 1]`.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_rgb(img: &RgbImage) -> Self {
        Plane {
            w: img.width() as usize,
            h: img.height() as usize,
            data: img.pixels().map(|p| luma(p.0) / 255.0).collect(),
        }
    }

    /// Box-averaged downsample by an integer factor; partial edge blocks are dropped.
    fn downsample(&self, f: usize) -> Self {
        let (w, h) = ((self.w / f).max(1), (self.h / f).max(1));
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                let mut n = 0.0;
                for yy in y * f..((y + 1) * f).min(self.h) {
                    for xx in x * f..((x + 1) * f).min(self.w) {
                        sum += self.data[yy * self.w + xx];
                        n += 1.0;
                    }
                }
                data[y * w + x] = sum / n;
            }
        }
        Plane { w, h, data }
    }

    fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    #[inline]
    fn bilinear(&self, sx: f64, sy: f64) -> f64 {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let p = |x: usize, y: usize| self.data[y * self.w + x];
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

#[inline]
fn inside(sx: f64, sy: f64, w: usize, h: usize) -> bool {
    sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
}

/// NCC between `fake` and the warped `original` over covered pixels, or
/// `None` when too little of the fake is covered. A flat side scores 0.
fn ncc(fake: &Plane, original: &Plane, spec: &AlignmentSpec) -> Option<f64> {
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for y in 0..fake.h {
        for x in 0..fake.w {
            let (sx, sy) = spec.source(x as u32, y as u32);
            if !inside(sx, sy, original.w, original.h) {
                continue;
            }
            let a = fake.data[y * fake.w + x];
            let b = original.bilinear(sx, sy);
            n += 1.0;
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    if n < MIN_COVERAGE * (fake.w * fake.h) as f64 {
        return None;
    }
    let va = saa / n - (sa / n).powi(2);
    let vb = sbb / n - (sb / n).powi(2);
    if va <= 1e-12 || vb <= 1e-12 {
        return Some(0.0);
    }
    Some(((sab / n - sa * sb / (n * n)) / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

fn mean_ncc(pairs: &[(Plane, Plane)], spec: &AlignmentSpec) -> Option<f64> {
    let mut sum = 0.0;
    for (f, o) in pairs {
        sum += ncc(f, o, spec)?;
    }
    Some(sum / pairs.len() as f64)
}

/// Indices of up to `SCORE_FRAMES` evenly spaced frames out of `n`.
fn score_frames(n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..SCORE_FRAMES)
        .map(|i| if SCORE_FRAMES == 1 { 0 } else { i * (n - 1) / (SCORE_FRAMES - 1) })
        .collect();
    idx.dedup();
    idx
}

fn scales() -> Vec<f64> {
    let steps = ((SCALE_MAX - SCALE_MIN) / SCALE_STEP).round() as usize;
    (0..=steps).map(|i| SCALE_MIN + i as f64 * SCALE_STEP).collect()
}

/// Best candidate over the product of `scales` and offsets; ties keep the
/// earliest candidate in iteration order, so the result is deterministic.
fn search(
    pairs: &[(Plane, Plane)],
    scales: &[f64],
    dys: std::ops::RangeInclusive<i32>,
    dxs: std::ops::RangeInclusive<i32>,
) -> Option<AlignmentSpec> {
    let candidates: Vec<AlignmentSpec> = scales
        .iter()
        .flat_map(|&scale| {
            let dxs = dxs.clone();
            dys.clone().flat_map(move |dy| {
                dxs.clone().map(move |dx| AlignmentSpec { scale, offset: (dy, dx), score: 0.0 })
            })
        })
        .collect();
    let scored: Vec<Option<f64>> = candidates.par_iter().map(|c| mean_ncc(pairs, c)).collect();
    let mut best: Option<AlignmentSpec> = None;
    for (c, s) in candidates.into_iter().zip(scored) {
        if let Some(score) = s {
            // Prefer the identity-like candidate among equal scores.
            let better = match best {
                None => true,
                Some(b) => score > b.score + 1e-12,
            };
            if better {
                best = Some(AlignmentSpec { score, ..c });
            }
        }
    }
    best
}

fn check_frames(frames: &[RgbImage], what: &str) -> Result<(u32, u32)> {
    let first = frames.first().ok_or_else(|| Error::invalid(format!("{what} video has no frames")))?;
    let dims = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != dims) {
        return Err(Error::shape(format!("{what} frames differ in resolution")));
    }
    Ok(dims)
}

/// Finds the scale and offset that best map fake pixels onto the original.
pub fn align(fake: &[RgbImage], original: &[RgbImage]) -> Result<AlignmentSpec> {
    let (fw, fh) = check_frames(fake, "fake")?;
    check_frames(original, "original")?;
    let n = fake.len().min(original.len());
    let pairs: Vec<(Plane, Plane)> = score_frames(n)
        .into_iter()
        .map(|i| (Plane::from_rgb(&fake[i]), Plane::from_rgb(&original[i])))
        .collect();
    let flat = |p: &Plane| p.variance() <= 1e-12;
    if pairs.iter().all(|(f, _)| flat(f)) || pairs.iter().all(|(_, o)| flat(o)) {
        return Ok(AlignmentSpec::IDENTITY);
    }

    let coarse: Vec<(Plane, Plane)> = pairs
        .iter()
        .map(|(f, o)| (f.downsample(COARSE as usize), o.downsample(COARSE as usize)))
        .collect();
    let reach = |len: u32, factor: u32| ((len as f64 * OFFSET_FRACTION) / factor as f64).round() as i32;
    let (ry, rx) = (reach(fh, COARSE), reach(fw, COARSE));
    let scale_grid = scales();
    let Some(c) = search(&coarse, &scale_grid, -ry..=ry, -rx..=rx) else {
        return Ok(AlignmentSpec::IDENTITY);
    };

    // Refine at full resolution: neighbouring scales and one coarse cell of offsets.
    let si = scale_grid
        .iter()
        .position(|&s| (s - c.scale).abs() < 1e-9)
        .unwrap_or(0);
    let near: Vec<f64> = scale_grid[si.saturating_sub(1)..(si + 2).min(scale_grid.len())].to_vec();
    let (fy, fx) = (reach(fh, 1), reach(fw, 1));
    let k = COARSE as i32;
    let cy = c.offset.0 * k;
    let cx = c.offset.1 * k;
    let dys = (cy - k).max(-fy)..=(cy + k).min(fy);
    let dxs = (cx - k).max(-fx)..=(cx + k).min(fx);
    Ok(search(&pairs, &near, dys, dxs).unwrap_or(AlignmentSpec::IDENTITY))
}

/// Original frame resampled onto the fake's pixel grid, plus a coverage mask.
fn warp(original: &RgbImage, w: u32, h: u32, spec: &AlignmentSpec) -> (Vec<[f64; 3]>, Vec<bool>) {
    let (ow, oh) = (original.width() as usize, original.height() as usize);
    let mut px = Vec::with_capacity((w * h) as usize);
    let mut covered = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = spec.source(x, y);
            covered.push(inside(sx, sy, ow, oh));
            px.push(sample_bilinear(original, sx, sy));
        }
    }
    (px, covered)
}

/// Square-window erosion (`erode`) or dilation; out-of-frame pixels are ignored.
fn morph(m: &Mask, r: u32, erode: bool) -> Mask {
    if r == 0 {
        return m.clone();
    }
    let (w, h) = (m.width as i64, m.height as i64);
    let r = r as i64;
    let mut out = Mask::new(m.width, m.height);
    for y in 0..h {
        for x in 0..w {
            let mut hit = erode;
            'win: for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let v = m.get(xx as u32, yy as u32);
                    if erode && !v {
                        hit = false;
                        break 'win;
                    }
                    if !erode && v {
                        hit = true;
                        break 'win;
                    }
                }
            }
            out.set(x as u32, y as u32, hit);
        }
    }
    out
}

/// Morphological opening then closing with a `(2r+1)`-square window.
pub fn open_close(m: &Mask, r: u32) -> Mask {
    let opened = morph(&morph(m, r, true), r, false);
    morph(&morph(&opened, r, false), r, true)
}

/// Thresholded difference between each fake frame and the aligned original.
///
/// Pixels whose source falls outside the original are never marked.
pub fn diff_mask(
    fake: &[RgbImage],
    original: &[RgbImage],
    spec: &AlignmentSpec,
    tau: f64,
    radius: u32,
) -> Result<MaskSequence> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("threshold {tau} must lie in [0, 1]")));
    }
    let (w, h) = check_frames(fake, "fake")?;
    check_frames(original, "original")?;
    let n = fake.len().min(original.len());
    let masks = (0..n)
        .into_par_iter()
        .map(|i| {
            let (warped, covered) = warp(&original[i], w, h, spec);
            if warped.len() != (w * h) as usize {
                return Err(Error::shape("warped original does not match the fake resolution"));
            }
            let mut m = Mask::new(w, h);
            for (j, (p, q)) in fake[i].pixels().zip(&warped).enumerate() {
                let d = (0..3)
                    .map(|c| (p.0[c] as f64 - q[c].round()).abs() / 255.0)
                    .fold(0.0, f64::max);
                m.data[j] = covered[j] && d > tau;
            }
            Ok(open_close(&m, radius))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskSequence { masks })
}

/// Intersection over union of one frame; an empty union scores 1.
pub fn frame_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::shape(format!(
            "mask {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean per-frame IoU of one video.
pub fn miou(pred: &MaskSequence, gt: &MaskSequence) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} predicted masks vs {} ground truth", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("miou: no frames"));
    }
    let mut sum = 0.0;
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        sum += frame_iou(p, g)?;
    }
    Ok(sum / pred.len() as f64)
}

/// Mean over videos of per-video mIoU.
pub fn miou_videos(videos: &[(MaskSequence, MaskSequence)]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::Empty("miou_videos: no videos"));
    }
    let mut sum = 0.0;
    for (p, g) in videos {
        sum += miou(p, g)?;
    }
    Ok(sum / videos.len() as f64)
}

/// Align then difference.
pub fn localize(fake: &[RgbImage], original: &[RgbImage], tau: f64, radius: u32) -> Result<(AlignmentSpec, MaskSequence)> {
    let spec = align(fake, original)?;
    Ok((spec, diff_mask(fake, original, &spec, tau, radius)?))
}

/// Applies the same geometric perturbation to a mask, thresholding at half.
pub fn perturb_mask(mask: &Mask, kind: &Perturbation) -> Result<Mask> {
    let rgb = RgbImage::from_fn(mask.width, mask.height, |x, y| {
        let v = if mask.get(x, y) { 255 } else { 0 };
        image::Rgb([v, v, v])
    });
    let out = perturb_frame(&rgb, kind)?;
    let mut m = Mask::new(mask.width, mask.height);
    for (i, p) in out.pixels().enumerate() {
        m.data[i] = p.0[0] >= 128;
    }
    Ok(m)
}
