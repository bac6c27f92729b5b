//! Labeled image collections and their on-disk directory layout.
//!
//! A split lives in `<root>/<split>/pos/*.png` and `<root>/<split>/neg/*.png`.
//! Loading sorts by file name, positives first.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageDims};
use crate::mask::LandmarkBoxes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            _ => Err(Error::argument(format!("label must be 0 or 1, got {i}"))),
        }
    }

    pub(crate) fn dir_name(self) -> &'static str {
        match self {
            Label::Negative => "neg",
            Label::Positive => "pos",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: Label,
}

/// Ordered samples from one split, all sharing the same dims.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    split: Split,
    samples: Vec<Sample>,
    landmarks: Option<LandmarkBoxes>,
}

impl LabeledDataset {
    pub fn new(split: Split, samples: Vec<Sample>, landmarks: Option<LandmarkBoxes>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dims = first.image.dims();
            if let Some(bad) = samples.iter().find(|s| s.image.dims() != dims) {
                return Err(Error::argument(format!(
                    "mixed dims in {split} dataset: {dims} vs {}",
                    bad.image.dims()
                )));
            }
        }
        Ok(LabeledDataset {
            split,
            samples,
            landmarks,
        })
    }

    pub fn empty(split: Split) -> Self {
        LabeledDataset {
            split,
            samples: Vec::new(),
            landmarks: None,
        }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn landmarks(&self) -> Option<&LandmarkBoxes> {
        self.landmarks.as_ref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dims shared by every sample, `None` when empty.
    pub fn dims(&self) -> Option<ImageDims> {
        self.samples.first().map(|s| s.image.dims())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Image> {
        self.samples
            .iter()
            .filter(|s| s.label == Label::Positive)
            .map(|s| &s.image)
    }

    /// Replaces every image via `f`, keeping labels and order.
    pub fn try_map_images<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Image) -> Result<Image>,
    {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    image: f(&s.image)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(self.split, samples, self.landmarks)
    }

    /// Writes `<root>/<split>/{pos,neg}/NNNNN.png`. Indices count within a label.
    pub fn save(&self, root: &Path) -> Result<()> {
        for label in [Label::Positive, Label::Negative] {
            let dir = split_dir(root, self.split).join(label.dir_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let images = self.samples.iter().filter(|s| s.label == label);
            for (i, sample) in images.enumerate() {
                sample.image.save(dir.join(format!("{i:05}.png")))?;
            }
        }
        Ok(())
    }

    /// Reads a split saved by [`LabeledDataset::save`]. A missing `pos` or
    /// `neg` directory is an I/O error.
    pub fn load(root: &Path, split: Split, landmarks: Option<LandmarkBoxes>) -> Result<Self> {
        let mut samples = Vec::new();
        for label in [Label::Positive, Label::Negative] {
            let dir = split_dir(root, split).join(label.dir_name());
            for path in list_images(&dir)? {
                samples.push(Sample {
                    image: Image::load(&path)?,
                    label,
                });
            }
        }
        LabeledDataset::new(split, samples, landmarks)
    }
}

pub fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.name())
}

/// Sorted PNG/JPEG files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
