//! Monocular image sequences in a few common directory layouts.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("no images found in {0}")]
    NoImages(PathBuf),
    #[error("unknown layout `{0}` (expected kitti_like, euroc_like or flat)")]
    UnknownLayout(String),
    #[error("image name {0} is not a timestamp")]
    BadTimestamp(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `image_0/` (left camera of a stereo pair).
    KittiLike,
    /// `cam0/data/`, ordered by the timestamp in each file name.
    EurocLike,
    /// Images directly under the root, in lexicographic order.
    Flat,
}

impl Layout {
    pub fn image_dir(self, root: &Path) -> PathBuf {
        match self {
            Layout::KittiLike => root.join("image_0"),
            Layout::EurocLike => root.join("cam0").join("data"),
            Layout::Flat => root.to_path_buf(),
        }
    }
}

impl FromStr for Layout {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kitti_like" | "kitti" => Ok(Layout::KittiLike),
            "euroc_like" | "euroc" => Ok(Layout::EurocLike),
            "flat" => Ok(Layout::Flat),
            _ => Err(SequenceError::UnknownLayout(s.to_string())),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::KittiLike => "kitti_like",
            Layout::EurocLike => "euroc_like",
            Layout::Flat => "flat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub frame_id: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub layout: Layout,
    pub images: Vec<ImageEntry>,
    pub heatmap_dir: Option<PathBuf>,
    pub feature_dir: Option<PathBuf>,
    pub poses: Option<PathBuf>,
}

impl SequenceManifest {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.exists().then_some(p)
}

/// Lists the frames of a sequence. Frame ids are dense from 0 in reading
/// order. `heatmaps/`, `features/` and `poses.txt` under the root are
/// picked up when present.
pub fn read_sequence(root: impl AsRef<Path>, layout: Layout) -> Result<SequenceManifest, SequenceError> {
    let root = root.as_ref();
    let dir = layout.image_dir(root);
    if !dir.is_dir() {
        return Err(SequenceError::MissingDir(dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| is_image(p))
        .collect();
    if files.is_empty() {
        return Err(SequenceError::NoImages(dir));
    }
    if layout == Layout::EurocLike {
        let mut keyed = files
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                stem.parse::<u128>()
                    .map(|t| (t, p.clone()))
                    .map_err(|_| SequenceError::BadTimestamp(p.display().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        keyed.sort();
        files = keyed.into_iter().map(|(_, p)| p).collect();
    } else {
        files.sort();
    }
    Ok(SequenceManifest {
        root: root.to_path_buf(),
        layout,
        images: files
            .into_iter()
            .enumerate()
            .map(|(i, path)| ImageEntry {
                frame_id: i as u64,
                path,
            })
            .collect(),
        heatmap_dir: existing(root.join("heatmaps")),
        feature_dir: existing(root.join("features")),
        poses: existing(root.join("poses.txt")),
    })
}
