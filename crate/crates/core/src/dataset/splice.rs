//! Object splicing: composite a scaled, masked object sequence into a host video.

use image::{Rgb, RgbImage};
use rand::Rng;

use super::frames::Mask;
use super::synth::{render_original, SynthConfig};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone)]
pub struct SpliceSpec {
    pub scale: f64,
    /// Top-left corner of the scaled object, as `(row, col)`.
    pub pos: (u32, u32),
    pub object_frames: Vec<RgbImage>,
    /// Opacity masks matching `object_frames`; set pixels are composited.
    pub object_masks: Vec<Mask>,
}

impl SpliceSpec {
    fn scaled_size(&self) -> Result<(u32, u32)> {
        let first = self
            .object_frames
            .first()
            .ok_or(Error::Empty("splice object has no frames"))?;
        let w = (first.width() as f64 * self.scale).round() as u32;
        let h = (first.height() as f64 * self.scale).round() as u32;
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "scale {} shrinks the object to nothing",
                self.scale
            )));
        }
        Ok((w, h))
    }
}

/// Composites the object into the first `object_frames.len()` host frames.
///
/// Returns the spliced frames and one mask per host frame marking exactly the
/// composited pixels; frames past the object sequence are untouched and get
/// empty masks. The object is resampled with nearest neighbour so every
/// written pixel is an object pixel.
pub fn synth_splice(host: &[RgbImage], spec: &SpliceSpec) -> Result<(Vec<RgbImage>, Vec<Mask>)> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::invalid(format!("splice scale {} must be positive", spec.scale)));
    }
    let m_obj = spec.object_frames.len();
    if spec.object_masks.len() != m_obj {
        return Err(Error::shape(format!(
            "{m_obj} object frames but {} object masks",
            spec.object_masks.len()
        )));
    }
    if m_obj >= host.len() {
        return Err(Error::invalid(format!(
            "object has {m_obj} frames, must be fewer than the host's {}",
            host.len()
        )));
    }
    let (sw, sh) = spec.scaled_size()?;
    let (ow, oh) = spec.object_frames[0].dimensions();
    for (f, m) in spec.object_frames.iter().zip(&spec.object_masks) {
        if f.dimensions() != (ow, oh) || (m.width, m.height) != (ow, oh) {
            return Err(Error::shape("object frames and masks must share one size"));
        }
    }
    let (row, col) = spec.pos;
    let (hw, hh) = host[0].dimensions();
    if col + sw > hw || row + sh > hh {
        return Err(Error::invalid(format!(
            "scaled object {sw}x{sh} at (row {row}, col {col}) exceeds the {hw}x{hh} host frame"
        )));
    }

    let mut frames = host.to_vec();
    let mut masks: Vec<Mask> = host.iter().map(|f| Mask::new(f.width(), f.height())).collect();
    for i in 0..m_obj {
        if frames[i].dimensions() != (hw, hh) {
            return Err(Error::shape("host frames must share one size"));
        }
        let (obj, obj_mask) = (&spec.object_frames[i], &spec.object_masks[i]);
        for y in 0..sh {
            let oy = (((y as f64 + 0.5) / spec.scale) as u32).min(oh - 1);
            for x in 0..sw {
                let ox = (((x as f64 + 0.5) / spec.scale) as u32).min(ow - 1);
                if obj_mask.get(ox, oy) {
                    frames[i].put_pixel(col + x, row + y, *obj.get_pixel(ox, oy));
                    masks[i].set(col + x, row + y, true);
                }
            }
        }
    }
    Ok((frames, masks))
}

/// A synthetic host video, a spliced copy of it, and the exact masks.
#[derive(Debug, Clone)]
pub struct SpliceFixture {
    pub host: Vec<RgbImage>,
    pub fake: Vec<RgbImage>,
    pub masks: Vec<Mask>,
}

const CORNERS: [[u8; 3]; 8] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
    [255, 255, 255],
];

/// Splices a pulsing disc into a rendered host. Each frame's disc takes the
/// RGB-cube corner whose smallest per-pixel max-channel difference to the
/// covered host pixels is largest, so the object stands out everywhere.
/// The disc stays at least 15% of the frame away from every border.
pub fn splice_fixture(size: u32, frames: usize, seed: u64) -> Result<SpliceFixture> {
    if size < 20 || frames < 2 {
        return Err(Error::invalid("splice fixture needs size >= 20 and at least 2 frames"));
    }
    let cfg = SynthConfig { num_groups: 1, fakes_per_group: 0, frames, size, seed };
    let host = render_original(&cfg, seed::derive(seed, &[0x5971]));
    let mut rng = seed::rng(seed, &[0x5972]);
    let side = size * 2 / 5;
    let margin = (size as f64 * 0.15).ceil() as u32;
    let span = size - side - 2 * margin;
    let pos = (margin + rng.gen_range(0..=span), margin + rng.gen_range(0..=span));
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let m_obj = frames - 1;
    let mut object_frames = Vec::with_capacity(m_obj);
    let mut object_masks = Vec::with_capacity(m_obj);
    for (i, frame) in host.iter().enumerate().take(m_obj) {
        let c = side as f64 / 2.0;
        let r = side as f64 * (0.36 + 0.1 * (phase + i as f64 * 0.7).sin());
        let mut mask = Mask::new(side, side);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                mask.set(x, y, dx * dx + dy * dy <= r * r);
            }
        }
        let separation = |color: [u8; 3]| {
            let mut worst = u8::MAX;
            for y in 0..side {
                for x in 0..side {
                    if mask.get(x, y) {
                        let h = frame.get_pixel(pos.1 + x, pos.0 + y).0;
                        let d = (0..3).map(|k| h[k].abs_diff(color[k])).max().unwrap();
                        worst = worst.min(d);
                    }
                }
            }
            worst
        };
        let color = *CORNERS.iter().max_by_key(|&&c| separation(c)).unwrap();
        object_frames.push(RgbImage::from_pixel(side, side, Rgb(color)));
        object_masks.push(mask);
    }
    let spec = SpliceSpec { scale: 1.0, pos, object_frames, object_masks };
    let (fake, masks) = synth_splice(&host, &spec)?;
    Ok(SpliceFixture { host, fake, masks })
}
