//! Procedural synthetic faces.
//!
//! Each face is a flat skin-tone field with darker eye and mouth rectangles
//! and independent per-pixel Gaussian noise. Positive faces additionally get
//! Gaussian red-channel blobs over the cheeks, nose bridge, and forehead.
//! The random draws never depend on the label, so with zero blob amplitude a
//! positive and a negative face from the same seed are identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Label, LabeledDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::image::{Image, ImageDims, CANONICAL_HEIGHT, CANONICAL_WIDTH};
use crate::mask::{LandmarkBoxes, PixelRect};

/// Rectangle in fractional image coordinates (row/height first).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracRect {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl FracRect {
    fn to_pixels(self, dims: ImageDims) -> PixelRect {
        let (h, w) = (dims.height as f64, dims.width as f64);
        let top = (self.top * h).round() as usize;
        let left = (self.left * w).round() as usize;
        let bottom = ((self.top + self.height) * h).round() as usize;
        let right = ((self.left + self.width) * w).round() as usize;
        PixelRect {
            top,
            left,
            height: bottom.saturating_sub(top),
            width: right.saturating_sub(left),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceParams {
    pub height: usize,
    pub width: usize,
    pub skin_tone: [f64; 3],
    /// Std of a per-face, per-channel offset added to the skin tone.
    pub skin_jitter: f64,
    /// Fractional (row, col) blob centers.
    pub blob_centers: Vec<[f64; 2]>,
    /// Blob standard deviation in pixels.
    pub blob_sigma: f64,
    /// Red-channel boost at a blob center.
    pub blob_amplitude: f64,
    pub noise_std: f64,
    pub left_eye: FracRect,
    pub right_eye: FracRect,
    pub mouth: FracRect,
    pub eye_fill: [f64; 3],
    pub mouth_fill: [f64; 3],
}

impl Default for FaceParams {
    fn default() -> Self {
        FaceParams {
            height: CANONICAL_HEIGHT,
            width: CANONICAL_WIDTH,
            skin_tone: [0.72, 0.55, 0.47],
            skin_jitter: 0.03,
            // cheeks, nose bridge, forehead
            blob_centers: vec![[0.55, 0.30], [0.55, 0.70], [0.50, 0.50], [0.22, 0.50]],
            blob_sigma: 12.0,
            blob_amplitude: 0.25,
            noise_std: 0.03,
            left_eye: FracRect { top: 0.35, left: 0.18, height: 0.08, width: 0.22 },
            right_eye: FracRect { top: 0.35, left: 0.60, height: 0.08, width: 0.22 },
            mouth: FracRect { top: 0.72, left: 0.33, height: 0.09, width: 0.34 },
            eye_fill: [0.22, 0.17, 0.15],
            mouth_fill: [0.45, 0.24, 0.24],
        }
    }
}

impl FaceParams {
    pub fn dims(&self) -> Result<ImageDims> {
        ImageDims::rgb(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        let unit = |name: &str, c: &[f64; 3]| {
            if c.iter().all(|v| (0.0..=1.0).contains(v)) {
                Ok(())
            } else {
                Err(Error::argument(format!("{name} components must lie in [0, 1]")))
            }
        };
        unit("skin_tone", &self.skin_tone)?;
        unit("eye_fill", &self.eye_fill)?;
        unit("mouth_fill", &self.mouth_fill)?;
        for (name, v) in [
            ("blob_amplitude", self.blob_amplitude),
            ("noise_std", self.noise_std),
            ("skin_jitter", self.skin_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::argument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.blob_sigma > 0.0 && self.blob_sigma.is_finite()) {
            return Err(Error::argument("blob_sigma must be positive"));
        }
        self.landmarks()?.validate(dims)
    }

    /// Eye and mouth boxes in pixel coordinates.
    pub fn landmarks(&self) -> Result<LandmarkBoxes> {
        let dims = self.dims()?;
        Ok(LandmarkBoxes {
            left_eye: self.left_eye.to_pixels(dims),
            right_eye: self.right_eye.to_pixels(dims),
            mouth: self.mouth.to_pixels(dims),
        })
    }

    /// Pixel coordinates of each blob center.
    pub fn blob_pixels(&self) -> Vec<(f64, f64)> {
        self.blob_centers
            .iter()
            .map(|[r, c]| (r * self.height as f64, c * self.width as f64))
            .collect()
    }

    fn blob_field(&self) -> Vec<f64> {
        let centers = self.blob_pixels();
        let denom = 2.0 * self.blob_sigma * self.blob_sigma;
        let mut field = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                let v: f64 = centers
                    .iter()
                    .map(|&(cr, cc)| {
                        let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                        (-d2 / denom).exp()
                    })
                    .sum();
                field.push(self.blob_amplitude * v);
            }
        }
        field
    }
}

/// Generates one face. Deterministic in `(seed, label, params)`.
pub fn gen_face(seed: u64, label: Label, params: &FaceParams) -> Result<Image> {
    params.validate()?;
    let blobs = (label == Label::Positive).then(|| params.blob_field());
    Ok(render_face(seed, blobs.as_deref(), params))
}

fn render_face(seed: u64, blobs: Option<&[f64]>, params: &FaceParams) -> Image {
    let dims = ImageDims {
        height: params.height,
        width: params.width,
        channels: 3,
    };
    let boxes = params
        .landmarks()
        .expect("params validated before rendering");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skin = params.skin_tone;
    for v in &mut skin {
        let z: f64 = rng.sample(StandardNormal);
        *v += params.skin_jitter * z;
    }

    let mut data = Vec::with_capacity(dims.value_count());
    for r in 0..dims.height {
        for c in 0..dims.width {
            let mut px = if boxes.left_eye.contains(r, c) || boxes.right_eye.contains(r, c) {
                params.eye_fill
            } else if boxes.mouth.contains(r, c) {
                params.mouth_fill
            } else {
                skin
            };
            if let Some(field) = blobs {
                px[0] += field[r * dims.width + c];
            }
            for v in px {
                let z: f64 = rng.sample(StandardNormal);
                data.push((v + params.noise_std * z).clamp(0.0, 1.0));
            }
        }
    }
    Image::from_vec_unchecked(dims, data)
}

/// Per-split, per-label sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetCounts {
    pub train_pos: usize,
    pub train_neg: usize,
    pub val_pos: usize,
    pub val_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        DatasetCounts {
            train_pos: 250,
            train_neg: 500,
            val_pos: 50,
            val_neg: 100,
            test_pos: 50,
            test_neg: 150,
        }
    }
}

impl DatasetCounts {
    pub fn zero() -> Self {
        DatasetCounts {
            train_pos: 0,
            train_neg: 0,
            val_pos: 0,
            val_neg: 0,
            test_pos: 0,
            test_neg: 0,
        }
    }

    pub fn for_split(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (self.train_pos, self.train_neg),
            Split::Val => (self.val_pos, self.val_neg),
            Split::Test => (self.test_pos, self.test_neg),
        }
    }
}

/// Seed for one sample, from a hash of its identity. Adding samples or
/// splits never changes the seeds of existing ones.
pub fn sample_seed(master_seed: u64, split: Split, label: Label, index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"redmask/sample/v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(split.name().as_bytes());
    hasher.update([label.index() as u8]);
    hasher.update((index as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &LabeledDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Generates one split: positives first, then negatives.
pub fn gen_split(master_seed: u64, split: Split, counts: &DatasetCounts, params: &FaceParams) -> Result<LabeledDataset> {
    params.validate()?;
    let blobs = params.blob_field();
    let (pos, neg) = counts.for_split(split);
    let mut samples = Vec::with_capacity(pos + neg);
    for (label, n) in [(Label::Positive, pos), (Label::Negative, neg)] {
        for i in 0..n {
            let seed = sample_seed(master_seed, split, label, i);
            let field = (label == Label::Positive).then_some(blobs.as_slice());
            samples.push(Sample {
                image: render_face(seed, field, params),
                label,
            });
        }
    }
    LabeledDataset::new(split, samples, Some(params.landmarks()?))
}

pub fn gen_dataset(master_seed: u64, counts: &DatasetCounts, params: &FaceParams) -> Result<DatasetSplits> {
    Ok(DatasetSplits {
        train: gen_split(master_seed, Split::Train, counts, params)?,
        val: gen_split(master_seed, Split::Val, counts, params)?,
        test: gen_split(master_seed, Split::Test, counts, params)?,
    })
}

/// Written next to generated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub dims: ImageDims,
    pub counts: DatasetCounts,
    pub params: FaceParams,
    pub landmarks: LandmarkBoxes,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::extract_channel;
    use crate::mask::{build_mask, mean_face, privacy_audit, MaskSpec};

    #[test]
    fn defaults_are_valid() {
        let p = FaceParams::default();
        p.validate().unwrap();
        let lm = p.landmarks().unwrap();
        assert_eq!(lm.left_eye, PixelRect { top: 53, left: 23, height: 12, width: 29 });
        assert_eq!(lm.mouth.top, 108);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = FaceParams { blob_amplitude: -0.1, ..Default::default() };
        assert!(p.validate().is_err());
        p = FaceParams { skin_tone: [1.2, 0.5, 0.5], ..Default::default() };
        assert!(gen_face(0, Label::Negative, &p).is_err());
        p = FaceParams { noise_std: f64::NAN, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_amplitude_positive_equals_negative() {
        let p = FaceParams { blob_amplitude: 0.0, ..Default::default() };
        for seed in [0, 7, 12345] {
            assert_eq!(
                gen_face(seed, Label::Positive, &p).unwrap(),
                gen_face(seed, Label::Negative, &p).unwrap()
            );
        }
    }

    #[test]
    fn noiseless_blob_peak() {
        let p = FaceParams {
            blob_centers: vec![[0.5, 0.5]],
            noise_std: 0.0,
            skin_jitter: 0.0,
            blob_amplitude: 0.2,
            ..Default::default()
        };
        let img = gen_face(3, Label::Positive, &p).unwrap();
        // center (75, 65): exp(0) = 1
        assert!((img.get(75, 65, 0) - (0.72 + 0.2)).abs() < 1e-15);
        assert_eq!(img.get(75, 65, 1), 0.55);

        let hot = FaceParams { blob_amplitude: 0.5, ..p };
        let img = gen_face(3, Label::Positive, &hot).unwrap();
        assert_eq!(img.get(75, 65, 0), 1.0);
    }

    #[test]
    fn deterministic_faces() {
        let p = FaceParams::default();
        assert_eq!(gen_face(9, Label::Positive, &p).unwrap(), gen_face(9, Label::Positive, &p).unwrap());
        assert_ne!(gen_face(9, Label::Positive, &p).unwrap(), gen_face(10, Label::Positive, &p).unwrap());
    }

    #[test]
    fn seeds_depend_on_identity() {
        let a = sample_seed(1, Split::Train, Label::Positive, 0);
        assert_eq!(a, sample_seed(1, Split::Train, Label::Positive, 0));
        assert_ne!(a, sample_seed(1, Split::Val, Label::Positive, 0));
        assert_ne!(a, sample_seed(1, Split::Train, Label::Negative, 0));
        assert_ne!(a, sample_seed(2, Split::Train, Label::Positive, 0));
    }

    #[test]
    fn zero_counts_give_empty_splits() {
        let s = gen_dataset(4, &DatasetCounts::zero(), &FaceParams::default()).unwrap();
        assert!(s.train.is_empty() && s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let counts = DatasetCounts { train_pos: 3, train_neg: 2, val_pos: 1, val_neg: 1, test_pos: 0, test_neg: 2 };
        let p = FaceParams { height: 20, width: 16, ..Default::default() };
        let a = gen_dataset(11, &counts, &p).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (5, 2, 2));
        assert_eq!(a.train.count(Label::Positive), 3);
        assert_eq!(a.test.split(), Split::Test);
        assert_eq!(a, gen_dataset(11, &counts, &p).unwrap());

        // Growing one split leaves the others untouched.
        let more = DatasetCounts { val_neg: 5, ..counts };
        let b = gen_dataset(11, &more, &p).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val.samples()[..2], b.val.samples()[..2]);
    }

    #[test]
    fn redness_prior_and_emergent_privacy() {
        let counts = DatasetCounts { train_pos: 100, ..DatasetCounts::zero() };
        let p = FaceParams::default();
        let ds = gen_dataset(21, &counts, &p).unwrap().train;
        let mean = mean_face(ds.positives()).unwrap();
        let red = extract_channel(&mean, 0).unwrap();
        let lm = p.landmarks().unwrap();
        let at = |r: usize, c: usize| red.values()[r * p.width + c];
        let centers = |rect: PixelRect| (rect.top + rect.height / 2, rect.left + rect.width / 2);
        for (br, bc) in p.blob_pixels() {
            let blob = at(br as usize, bc as usize);
            for rect in [lm.left_eye, lm.right_eye, lm.mouth] {
                let (r, c) = centers(rect);
                assert!(blob - at(r, c) >= 0.5 * p.blob_amplitude);
            }
        }

        let spec = MaskSpec::new(29.0, p.dims().unwrap()).unwrap();
        let (mask, _) = build_mask(&ds, &spec).unwrap();
        let audit = privacy_audit(&mask, &lm).unwrap();
        assert!(audit.identity_region_retention <= 0.05, "{audit:?}");
    }
}
