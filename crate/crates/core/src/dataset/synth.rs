//! Procedural grouped video dataset.
//!
//! Every group gets an original clip of moving soft-edged shapes over a
//! textured gradient background, with colors, texture and trajectories drawn
//! from a per-group stream. Fakes are localized edits of the original (region
//! recolor, object swap, object removal) and come with per-frame ground-truth
//! masks of the changed pixels.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::descriptor::extract_descriptor;
use super::frames::{self, Mask};
use super::{load_manifest, manifest_row, GroupSet, Role, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::seed;

/// Fraction of pixels a fake must change in every frame.
pub const MIN_EDIT_FRACTION: f64 = 0.01;
pub const MAX_EDIT_FRACTION: f64 = 0.40;

const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub num_groups: usize,
    pub fakes_per_group: usize,
    pub frames: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_groups: 8,
            fakes_per_group: 4,
            frames: 16,
            size: 48,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Disc,
    Square,
}

#[derive(Debug, Clone)]
struct Shape {
    kind: ShapeKind,
    color: [f64; 3],
    radius: f64,
    start: (f64, f64),
    velocity: (f64, f64),
}

#[derive(Debug, Clone)]
struct Scene {
    bg: [[f64; 3]; 2],
    angle: f64,
    tex_amp: f64,
    tex_freq: (f64, f64),
    tex_phase: f64,
    tex_speed: f64,
    shapes: Vec<Shape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Recolor,
    ObjectSwap,
    Inpaint,
}

impl EditKind {
    pub fn name(self) -> &'static str {
        match self {
            EditKind::Recolor => "recolor",
            EditKind::ObjectSwap => "swap",
            EditKind::Inpaint => "inpaint",
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.gen_range(20.0..235.0))
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let radius = rng.gen_range(0.08..0.17) * size;
    let speed = rng.gen_range(0.3..1.2);
    let dir = rng.gen_range(0.0..2.0 * PI);
    Shape {
        kind: if rng.gen_bool(0.5) {
            ShapeKind::Disc
        } else {
            ShapeKind::Square
        },
        color: random_color(rng),
        radius,
        start: (
            rng.gen_range(radius..size - radius),
            rng.gen_range(radius..size - radius),
        ),
        velocity: (speed * dir.cos(), speed * dir.sin()),
    }
}

fn random_scene(rng: &mut ChaCha8Rng, size: f64) -> Scene {
    let n_shapes = rng.gen_range(2..=3);
    Scene {
        bg: [random_color(rng), random_color(rng)],
        angle: rng.gen_range(0.0..2.0 * PI),
        tex_amp: rng.gen_range(8.0..24.0),
        tex_freq: (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)),
        tex_phase: rng.gen_range(0.0..2.0 * PI),
        tex_speed: rng.gen_range(0.05..0.25),
        shapes: (0..n_shapes).map(|_| random_shape(rng, size)).collect(),
    }
}

/// Position after `t` frames, bouncing off the frame edges.
fn bounce(start: f64, v: f64, t: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let p = (start - lo + v * t).rem_euclid(2.0 * span);
    lo + if p > span { 2.0 * span - p } else { p }
}

fn render(scene: &Scene, t: usize, size: u32) -> RgbImage {
    let s = size as f64;
    let t = t as f64;
    let centers: Vec<(f64, f64)> = scene
        .shapes
        .iter()
        .map(|sh| {
            (
                bounce(sh.start.0, sh.velocity.0, t, sh.radius, s - sh.radius),
                bounce(sh.start.1, sh.velocity.1, t, sh.radius, s - sh.radius),
            )
        })
        .collect();
    let (ca, sa) = (scene.angle.cos(), scene.angle.sin());
    RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let (u, v) = (2.0 * px / s - 1.0, 2.0 * py / s - 1.0);
        let g = (0.5 + 0.35 * (ca * u + sa * v)).clamp(0.0, 1.0);
        let tex = scene.tex_amp
            * (2.0 * PI * (scene.tex_freq.0 * u + scene.tex_freq.1 * v) + scene.tex_phase
                + scene.tex_speed * t)
                .sin();
        let mut c = [0, 1, 2].map(|k| scene.bg[0][k] * (1.0 - g) + scene.bg[1][k] * g + tex);
        for (sh, &(cx, cy)) in scene.shapes.iter().zip(&centers) {
            let (dx, dy) = (px - cx, py - cy);
            let d = match sh.kind {
                ShapeKind::Disc => (dx * dx + dy * dy).sqrt(),
                ShapeKind::Square => dx.abs().max(dy.abs()),
            };
            let alpha = (sh.radius + 0.5 - d).clamp(0.0, 1.0);
            if alpha > 0.0 {
                for k in 0..3 {
                    c[k] = c[k] * (1.0 - alpha) + sh.color[k] * alpha;
                }
            }
        }
        Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

fn render_video(scene: &Scene, frames: usize, size: u32) -> Vec<RgbImage> {
    (0..frames).map(|t| render(scene, t, size)).collect()
}

fn diff_mask(a: &RgbImage, b: &RgbImage) -> Mask {
    let mut m = Mask::new(a.width(), a.height());
    for ((x, y, p), q) in a.enumerate_pixels().zip(b.pixels()) {
        if p != q {
            m.set(x, y, true);
        }
    }
    m
}

/// Derives one fake from the original, returning its frames, masks and edit kind.
fn make_fake(
    rng: &mut ChaCha8Rng,
    scene: &Scene,
    original: &[RgbImage],
    cfg: &SynthConfig,
) -> Result<(Vec<RgbImage>, Vec<Mask>, EditKind)> {
    let size = cfg.size as f64;
    for _ in 0..MAX_ATTEMPTS {
        let kind = match rng.gen_range(0..3) {
            0 => EditKind::Recolor,
            1 => EditKind::ObjectSwap,
            _ => EditKind::Inpaint,
        };
        let frames: Vec<RgbImage> = match kind {
            EditKind::Recolor => {
                let w = rng.gen_range(0.2..0.5) * size;
                let h = rng.gen_range(0.2..0.5) * size;
                let x0 = rng.gen_range(0.0..size - w);
                let y0 = rng.gen_range(0.0..size - h);
                let shift = rng.gen_range(1..=2);
                original
                    .iter()
                    .map(|f| {
                        let mut f = f.clone();
                        for (x, y, p) in f.enumerate_pixels_mut() {
                            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                            if fx >= x0 && fx < x0 + w && fy >= y0 && fy < y0 + h {
                                let c = p.0;
                                *p = Rgb([c[shift % 3], c[(shift + 1) % 3], c[(shift + 2) % 3]]);
                            }
                        }
                        f
                    })
                    .collect()
            }
            EditKind::ObjectSwap => {
                let mut edited = scene.clone();
                let i = rng.gen_range(0..edited.shapes.len());
                let sh = &mut edited.shapes[i];
                sh.kind = match sh.kind {
                    ShapeKind::Disc => ShapeKind::Square,
                    ShapeKind::Square => ShapeKind::Disc,
                };
                sh.color = random_color(rng);
                render_video(&edited, cfg.frames, cfg.size)
            }
            EditKind::Inpaint => {
                let mut edited = scene.clone();
                let i = rng.gen_range(0..edited.shapes.len());
                edited.shapes.remove(i);
                render_video(&edited, cfg.frames, cfg.size)
            }
        };
        let masks: Vec<Mask> = frames
            .iter()
            .zip(original)
            .map(|(f, o)| diff_mask(f, o))
            .collect();
        let total = (cfg.size * cfg.size) as f64;
        let ok = masks.iter().all(|m| {
            let frac = m.count() as f64 / total;
            (MIN_EDIT_FRACTION..=MAX_EDIT_FRACTION).contains(&frac)
        });
        if ok {
            return Ok((frames, masks, kind));
        }
    }
    Err(Error::invalid(format!(
        "could not draw a fake editing {}%-{}% of every frame in {MAX_ATTEMPTS} attempts",
        MIN_EDIT_FRACTION * 100.0,
        MAX_EDIT_FRACTION * 100.0
    )))
}

fn write_video(dir: &Path, frames: &[RgbImage], masks: Option<&[Mask]>) -> Result<()> {
    frames::write_frames(dir, frames)?;
    if let Some(masks) = masks {
        for (i, m) in masks.iter().enumerate() {
            frames::write_gray(&dir.join(frames::mask_name(i)), &m.to_gray())?;
        }
    }
    Ok(())
}

/// Renders a dataset into `out` and returns it as loaded from the written manifest.
pub fn gen_synthetic_dataset(cfg: &SynthConfig, out: &Path) -> Result<GroupSet> {
    if cfg.num_groups < 2 {
        return Err(Error::invalid("need at least 2 groups"));
    }
    if cfg.fakes_per_group < 2 {
        return Err(Error::invalid("need at least 2 fakes per group"));
    }
    if cfg.frames < 2 || cfg.size < 16 {
        return Err(Error::invalid("need at least 2 frames of at least 16x16 pixels"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut manifest = String::new();
    let mut original_descriptors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.num_groups);
    for g in 0..cfg.num_groups {
        // Redraw the scene until every frame differs from every earlier
        // original's frame at the same index.
        let mut attempt = 0u64;
        let (scene, original, descs) = loop {
            let mut rng = seed::rng(cfg.seed, &[g as u64, attempt]);
            let scene = random_scene(&mut rng, cfg.size as f64);
            let original = render_video(&scene, cfg.frames, cfg.size);
            let descs = original
                .iter()
                .map(extract_descriptor)
                .collect::<Result<Vec<_>>>()?;
            let distinct = original_descriptors.iter().all(|other| {
                other.iter().zip(&descs).all(|(a, b)| {
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() > 0.0
                })
            });
            if distinct {
                break (scene, original, descs);
            }
            attempt += 1;
        };
        original_descriptors.push(descs);

        let group_dir = format!("g{g:04}");
        let rel = format!("{group_dir}/original");
        write_video(&out.join(&rel), &original, None)?;
        manifest.push_str(&manifest_row(g as u32, Role::Original, &rel, &format!("{group_dir}_original")));

        let mut rng = seed::rng(cfg.seed, &[g as u64, u64::MAX]);
        for j in 0..cfg.fakes_per_group {
            let (frames, masks, kind) = make_fake(&mut rng, &scene, &original, cfg)?;
            let rel = format!("{group_dir}/fake_{j:02}");
            write_video(&out.join(&rel), &frames, Some(&masks))?;
            manifest.push_str(&manifest_row(
                g as u32,
                Role::Fake,
                &rel,
                &format!("{group_dir}_fake_{j:02}_{}", kind.name()),
            ));
        }
    }
    let path = out.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    load_manifest(&path)
}

/// Renders one original video for `group` without touching the filesystem.
/// Used to build localization fixtures.
pub fn render_original(cfg: &SynthConfig, group: u64) -> Vec<RgbImage> {
    let mut rng = seed::rng(cfg.seed, &[group, 0]);
    let scene = random_scene(&mut rng, cfg.size as f64);
    render_video(&scene, cfg.frames, cfg.size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::frames::{read_frames, read_masks};
    use walk::tree_bytes;

    mod walk {
        use std::path::Path;

        /// (relative path, contents) for every file under `root`, sorted.
        pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
            let mut out = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(dir) = stack.pop() {
                for e in std::fs::read_dir(&dir).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_dir() {
                        stack.push(p);
                    } else {
                        let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                        out.push((rel, std::fs::read(&p).unwrap()));
                    }
                }
            }
            out.sort();
            out
        }
    }

    fn small() -> SynthConfig {
        SynthConfig {
            num_groups: 2,
            fakes_per_group: 2,
            frames: 6,
            size: 32,
            seed: 7,
        }
    }

    #[test]
    fn generation_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let gs = gen_synthetic_dataset(&small(), a.path()).unwrap();
        gen_synthetic_dataset(&small(), b.path()).unwrap();
        assert_eq!(gs.m(), 2);
        assert_eq!(gs.n_fakes(), 4);
        let ta = tree_bytes(a.path());
        assert_eq!(ta.len(), 1 + 2 * 6 + 4 * 12);
        assert_eq!(ta, tree_bytes(b.path()));
    }

    #[test]
    fn fakes_edit_bounded_fraction_and_masks_match() {
        let dir = tempfile::tempdir().unwrap();
        let gs = gen_synthetic_dataset(&small(), dir.path()).unwrap();
        for g in &gs.groups {
            let orig = read_frames(&g.original.path).unwrap();
            for f in &g.fakes {
                let fake = read_frames(&f.path).unwrap();
                let masks = read_masks(&f.path, "mask_").unwrap();
                assert_eq!(masks.len(), fake.len());
                for ((a, b), m) in fake.iter().zip(&orig).zip(&masks) {
                    let changed = diff_mask(a, b);
                    assert_eq!(&changed, m);
                    let frac = changed.count() as f64 / (32.0 * 32.0);
                    assert!((0.01..=0.40).contains(&frac), "{frac}");
                }
            }
        }
    }

    #[test]
    fn originals_differ_in_descriptor_space() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { num_groups: 4, ..small() };
        let gs = gen_synthetic_dataset(&cfg, dir.path()).unwrap();
        let descs: Vec<Vec<Vec<f64>>> = gs
            .groups
            .iter()
            .map(|g| read_frames(&g.original.path).unwrap().iter().map(|f| extract_descriptor(f).unwrap()).collect())
            .collect();
        for i in 0..descs.len() {
            for j in i + 1..descs.len() {
                for (a, b) in descs[i].iter().zip(&descs[j]) {
                    let l2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    assert!(l2 > 0.0);
                }
            }
        }
    }

    #[test]
    fn bounce_stays_in_range() {
        for t in 0..100 {
            let p = bounce(5.0, 1.7, t as f64, 2.0, 10.0);
            assert!((2.0..=10.0).contains(&p));
        }
        assert_eq!(bounce(5.0, 1.0, 3.0, 2.0, 10.0), 8.0);
        assert_eq!(bounce(5.0, 1.0, 7.0, 2.0, 10.0), 8.0);
    }

    #[test]
    fn rejects_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_synthetic_dataset(&SynthConfig { num_groups: 1, ..small() }, dir.path()).is_err());
        assert!(gen_synthetic_dataset(&SynthConfig { fakes_per_group: 1, ..small() }, dir.path()).is_err());
    }
}
