use image::RgbImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::descriptor::extract_descriptor;
use super::{frames, VideoRef};
use crate::error::{Error, Result};

/// `T x D` matrix of per-frame descriptors fed to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature sequence contains non-finite values"));
        }
        Ok(FeatureSequence { frames })
    }

    /// Clip length.
    pub fn t(&self) -> usize {
        self.frames.nrows()
    }

    /// Descriptor dimension.
    pub fn d(&self) -> usize {
        self.frames.ncols()
    }
}

/// Descriptors for every frame of one video, computed once and reused by
/// every clip drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub descriptors: Vec<Vec<f64>>,
}

impl VideoFeatures {
    pub fn from_frames(frames: &[RgbImage]) -> Result<Self> {
        let descriptors = frames
            .par_iter()
            .map(extract_descriptor)
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoFeatures { descriptors })
    }

    pub fn load(video: &VideoRef) -> Result<Self> {
        Self::from_frames(&frames::read_frames(&video.path)?)
    }

    pub fn frame_count(&self) -> usize {
        self.descriptors.len()
    }

    pub fn clip_at(&self, start: usize, t: usize, stride: usize) -> Result<FeatureSequence> {
        let last = start + (t.saturating_sub(1)) * stride;
        if t == 0 || stride == 0 || last >= self.frame_count() {
            return Err(Error::invalid(format!(
                "clip of {t} frames at stride {stride} from {start} does not fit in {} frames",
                self.frame_count()
            )));
        }
        let d = self.descriptors[0].len();
        let mut m = Array2::zeros((t, d));
        for (row, i) in (start..=last).step_by(stride).enumerate() {
            m.row_mut(row)
                .iter_mut()
                .zip(&self.descriptors[i])
                .for_each(|(dst, &v)| *dst = v);
        }
        FeatureSequence::new(m)
    }
}

/// Draws a `t`-frame clip at `stride` with a uniformly chosen start offset.
pub fn sample_clip(
    video: &VideoFeatures,
    t: usize,
    stride: usize,
    seed: u64,
) -> Result<FeatureSequence> {
    if t == 0 || stride == 0 {
        return Err(Error::invalid("clip length and stride must be positive"));
    }
    let span = (t - 1) * stride + 1;
    if video.frame_count() < span {
        return Err(Error::invalid(format!(
            "video has {} frames, a {t}-frame clip at stride {stride} needs {span}",
            video.frame_count()
        )));
    }
    let max_start = video.frame_count() - span;
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..=max_start);
    video.clip_at(start, t, stride)
}

/// Start offset `sample_clip` picks for the given arguments.
pub fn clip_start(frame_count: usize, t: usize, stride: usize, seed: u64) -> Option<usize> {
    let span = (t.checked_sub(1)?) * stride + 1;
    let max_start = frame_count.checked_sub(span)?;
    Some(ChaCha8Rng::seed_from_u64(seed).gen_range(0..=max_start))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frame i's descriptor is the constant vector [i; 3], so a clip row
    /// reveals which frame it came from.
    fn numbered(n: usize) -> VideoFeatures {
        VideoFeatures {
            descriptors: (0..n).map(|i| vec![i as f64; 3]).collect(),
        }
    }

    fn frame_ids(c: &FeatureSequence) -> Vec<usize> {
        c.frames.column(0).iter().map(|&v| v as usize).collect()
    }

    #[test]
    fn deterministic_and_valid_window() {
        let v = numbered(10);
        let a = sample_clip(&v, 4, 1, 0).unwrap();
        let b = sample_clip(&v, 4, 1, 0).unwrap();
        assert_eq!(a, b);
        let ids = frame_ids(&a);
        assert!(ids[0] <= 6);
        assert_eq!(ids, (ids[0]..ids[0] + 4).collect::<Vec<_>>());
    }

    #[test]
    fn every_window_reachable() {
        let v = numbered(10);
        let starts: std::collections::BTreeSet<usize> =
            (0..200).map(|s| frame_ids(&sample_clip(&v, 4, 1, s).unwrap())[0]).collect();
        assert_eq!(starts.into_iter().collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn forced_windows() {
        assert_eq!(frame_ids(&sample_clip(&numbered(4), 4, 1, 9).unwrap()), [0, 1, 2, 3]);
        // Only start 0 satisfies 3 * 3 + start <= 9.
        for seed in 0..20 {
            assert_eq!(frame_ids(&sample_clip(&numbered(10), 4, 3, seed).unwrap()), [0, 3, 6, 9]);
        }
    }

    #[test]
    fn too_few_frames() {
        assert!(sample_clip(&numbered(3), 4, 1, 0).is_err());
        assert!(sample_clip(&numbered(9), 4, 3, 0).is_err());
    }
}
