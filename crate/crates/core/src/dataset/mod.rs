//! Grouped video datasets: one original plus its fakes per group.
//!
//! On disk a dataset is a directory of frame directories and a tab-separated
//! manifest, one row per video:
//!
//! ```text
//! group_id<TAB>role<TAB>relative_path<TAB>label
//! 0	original	g0000/original	g0000_original
//! 0	fake	g0000/fake_00	g0000_fake_00_recolor
//! ```
//!
//! `role` is `original` or `fake`. Blank lines and lines starting with `#`
//! are ignored.

pub mod clip;
pub mod descriptor;
pub mod frames;
pub mod perturb;
pub mod splice;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use clip::{sample_clip, FeatureSequence, VideoFeatures};
pub use descriptor::{extract_descriptor, DESCRIPTOR_DIM};
pub use frames::Mask;
pub use perturb::{perturb, Perturbation};
pub use splice::{splice_fixture, synth_splice, SpliceFixture, SpliceSpec};
pub use synth::{gen_synthetic_dataset, SynthConfig};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Original,
    Fake,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Original => "original",
            Role::Fake => "fake",
        }
    }
}

/// A video stored as a directory of `frame_%06d.ppm` files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRef {
    /// Resolved frame directory.
    pub path: PathBuf,
    /// Path as written in the manifest, relative to the dataset root.
    pub rel_path: String,
    pub frame_count: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub group_id: u32,
    pub original: VideoRef,
    pub fakes: Vec<VideoRef>,
}

impl Group {
    /// Original first, then fakes in manifest order.
    pub fn videos(&self) -> impl Iterator<Item = &VideoRef> {
        std::iter::once(&self.original).chain(self.fakes.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSet {
    pub root: PathBuf,
    pub groups: Vec<Group>,
}

impl GroupSet {
    /// Total number of videos.
    pub fn z(&self) -> usize {
        self.m() + self.n_fakes()
    }

    /// Number of originals (= groups).
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn n_fakes(&self) -> usize {
        self.groups.iter().map(|g| g.fakes.len()).sum()
    }

    pub fn group(&self, id: u32) -> Option<&Group> {
        self.groups.get(id as usize).filter(|g| g.group_id == id)
    }

    /// Splits off the last fake of every group as a held-out test video.
    ///
    /// The training half keeps the original and the remaining fakes, which
    /// must still number at least two per group.
    pub fn holdout_split(&self) -> Result<(GroupSet, Vec<(u32, VideoRef)>)> {
        let mut train = Vec::with_capacity(self.groups.len());
        let mut test = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            if g.fakes.len() < 3 {
                return Err(Error::invalid(format!(
                    "group {}: holding out one fake needs at least 3 fakes, found {}",
                    g.group_id,
                    g.fakes.len()
                )));
            }
            let (last, rest) = g.fakes.split_last().expect("non-empty");
            train.push(Group {
                group_id: g.group_id,
                original: g.original.clone(),
                fakes: rest.to_vec(),
            });
            test.push((g.group_id, last.clone()));
        }
        Ok((
            GroupSet {
                root: self.root.clone(),
                groups: train,
            },
            test,
        ))
    }
}

/// Reads and validates a manifest. `path` may name the manifest file or the
/// dataset directory containing `manifest.tsv`.
pub fn load_manifest(path: &Path) -> Result<GroupSet> {
    let file = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let root = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let fail = |msg: String| Error::Manifest {
        path: file.clone(),
        msg,
    };

    let mut originals: BTreeMap<u32, VideoRef> = BTreeMap::new();
    let mut fakes: BTreeMap<u32, Vec<VideoRef>> = BTreeMap::new();
    let mut seen_paths = HashSet::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(fail(format!(
                "line {}: expected 4 tab-separated fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let group_id: u32 = fields[0]
            .parse()
            .map_err(|_| fail(format!("line {}: bad group id {:?}", lineno + 1, fields[0])))?;
        let role = match fields[1] {
            "original" => Role::Original,
            "fake" => Role::Fake,
            other => {
                return Err(fail(format!(
                    "line {}: group {group_id}: unknown role {other:?}",
                    lineno + 1
                )))
            }
        };
        let rel = fields[2].to_string();
        if !seen_paths.insert(rel.clone()) {
            return Err(fail(format!("group {group_id}: duplicate video path {rel:?}")));
        }
        let dir = root.join(&rel);
        let frame_count = if dir.is_dir() {
            frames::count_frames(&dir)?
        } else {
            0
        };
        if frame_count == 0 {
            return Err(fail(format!(
                "group {group_id}: dangling path {rel:?} (no frame_*.ppm files)"
            )));
        }
        let video = VideoRef {
            path: dir,
            rel_path: rel,
            frame_count,
            label: fields[3].to_string(),
        };
        match role {
            Role::Original => {
                if originals.insert(group_id, video).is_some() {
                    return Err(fail(format!("group {group_id}: duplicate original")));
                }
            }
            Role::Fake => fakes.entry(group_id).or_default().push(video),
        }
    }

    let ids: Vec<u32> = originals
        .keys()
        .chain(fakes.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.is_empty() {
        return Err(fail("no groups".into()));
    }
    let mut groups = Vec::with_capacity(ids.len());
    for (expected, &id) in ids.iter().enumerate() {
        if id as usize != expected {
            return Err(fail(format!(
                "group ids must be dense from 0: expected {expected}, found {id}"
            )));
        }
        let original = originals
            .remove(&id)
            .ok_or_else(|| fail(format!("group {id}: no original")))?;
        let fs = fakes.remove(&id).unwrap_or_default();
        if fs.len() < 2 {
            return Err(fail(format!(
                "group {id}: needs at least 2 fakes, found {}",
                fs.len()
            )));
        }
        groups.push(Group {
            group_id: id,
            original,
            fakes: fs,
        });
    }
    Ok(GroupSet { root, groups })
}

pub(crate) fn manifest_row(group_id: u32, role: Role, rel: &str, label: &str) -> String {
    format!("{group_id}\t{}\t{rel}\t{label}\n", role.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn make_video(root: &Path, rel: &str) {
        frames::write_frames(&root.join(rel), &[RgbImage::new(4, 4), RgbImage::new(4, 4)]).unwrap();
    }

    fn write_manifest(root: &Path, rows: &[(u32, Role, &str)]) {
        let mut text = String::new();
        for (g, role, rel) in rows {
            make_video(root, rel);
            text.push_str(&manifest_row(*g, *role, rel, &rel.replace('/', "_")));
        }
        fs::write(root.join(MANIFEST_NAME), text).unwrap();
    }

    #[test]
    fn loads_two_groups() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            &[
                (1, Role::Fake, "b/f0"),
                (0, Role::Original, "a/o"),
                (0, Role::Fake, "a/f0"),
                (0, Role::Fake, "a/f1"),
                (1, Role::Original, "b/o"),
                (1, Role::Fake, "b/f1"),
            ],
        );
        let gs = load_manifest(dir.path()).unwrap();
        assert_eq!(gs.m(), 2);
        assert_eq!(gs.n_fakes(), 4);
        assert_eq!(gs.z(), 6);
        assert_eq!(gs.groups[1].original.rel_path, "b/o");
        assert_eq!(gs.groups[0].original.frame_count, 2);
    }

    #[test]
    fn missing_original_names_group() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for g in 0..4u32 {
            if g != 3 {
                rows.push((g, Role::Original, format!("g{g}/o")));
            }
            rows.push((g, Role::Fake, format!("g{g}/f0")));
            rows.push((g, Role::Fake, format!("g{g}/f1")));
        }
        let rows: Vec<(u32, Role, &str)> = rows.iter().map(|(g, r, p)| (*g, *r, p.as_str())).collect();
        write_manifest(dir.path(), &rows);
        let err = load_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("group 3: no original"), "{err}");
    }

    #[test]
    fn duplicate_original_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            &[
                (0, Role::Original, "a/o"),
                (0, Role::Original, "a/o2"),
                (0, Role::Fake, "a/f0"),
                (0, Role::Fake, "a/f1"),
            ],
        );
        let err = load_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("group 0: duplicate original"), "{err}");
    }

    #[test]
    fn too_few_fakes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), &[(0, Role::Original, "a/o"), (0, Role::Fake, "a/f0")]);
        let err = load_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("group 0: needs at least 2 fakes"), "{err}");
    }

    #[test]
    fn dangling_path_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            &[(0, Role::Original, "a/o"), (0, Role::Fake, "a/f0"), (0, Role::Fake, "a/f1")],
        );
        let mut text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        text.push_str("0\tfake\tnowhere\tx\n");
        fs::write(dir.path().join(MANIFEST_NAME), text).unwrap();
        let err = load_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("group 0: dangling path \"nowhere\""), "{err}");
    }

    #[test]
    fn sparse_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            &[(2, Role::Original, "a/o"), (2, Role::Fake, "a/f0"), (2, Role::Fake, "a/f1")],
        );
        assert!(load_manifest(dir.path()).is_err());
    }
}
