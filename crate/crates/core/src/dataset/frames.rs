//! Frame and mask files: binary P6 pixmaps and P5 graymaps.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.ppm")
}

pub fn mask_name(i: usize) -> String {
    format!("mask_{i:06}.pgm")
}

pub fn pred_mask_name(i: usize) -> String {
    format!("pred_mask_{i:06}.pgm")
}

/// Files in `dir` named `<prefix>*.<ext>`, in lexicographic order.
pub fn list_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.starts_with(prefix) && name.ends_with(ext) {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub fn count_frames(dir: &Path) -> Result<usize> {
    Ok(list_files(dir, "frame_", ".ppm")?.len())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    })?;
    Ok(img.to_rgb8())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    })?;
    Ok(img.to_luma8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

/// Every `frame_*.ppm` in `dir`.
pub fn read_frames(dir: &Path) -> Result<Vec<RgbImage>> {
    list_files(dir, "frame_", ".ppm")?
        .iter()
        .map(|p| read_rgb(p))
        .collect()
}

/// Every `mask_*.pgm` in `dir`, as boolean masks (non-zero = tampered).
pub fn read_masks(dir: &Path, prefix: &str) -> Result<Vec<Mask>> {
    list_files(dir, prefix, ".pgm")?
        .iter()
        .map(|p| read_gray(p).map(|g| Mask::from_gray(&g)))
        .collect()
}

pub fn write_frames(dir: &Path, frames: &[RgbImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_rgb(&dir.join(frame_name(i)), f)?;
    }
    Ok(())
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Mask {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v >= 128).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        let raw = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("mask buffer size")
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }
}
