//! Redness-informed region-of-interest masks.
//!
//! A mask is built once from the mean face of the positive training images:
//! the red plane of that mean is ranked and exactly
//! `k = ceil(top_percent / 100 * H * W)` pixels with the highest values are
//! kept. Equal values are ordered by row-major index, earlier pixel first,
//! so the result is deterministic and the retained count never depends on
//! ties. The same mask is then multiplied into every image of every split.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::image::{extract_channel, write_png, ChannelPlane, Image, ImageDims};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub top_percent: f64,
    pub dims: ImageDims,
}

impl MaskSpec {
    pub fn new(top_percent: f64, dims: ImageDims) -> Result<Self> {
        let spec = MaskSpec { top_percent, dims };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return Err(Error::argument(format!(
                "top_percent must lie in (0, 100], got {}",
                self.top_percent
            )));
        }
        self.dims.validate()
    }

    /// Number of pixels a mask built from this spec retains.
    pub fn selected_count(&self) -> usize {
        selected_count(self.top_percent, self.dims.pixel_count())
    }
}

/// `ceil(top_percent / 100 * pixels)`, clamped to `1..=pixels`.
///
/// The product is formed before dividing and snapped to the nearest integer
/// when within rounding noise of it, so `29% of 19500` is 5655, not 5656.
pub fn selected_count(top_percent: f64, pixels: usize) -> usize {
    let exact = top_percent * pixels as f64 / 100.0;
    let nearest = exact.round();
    let k = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, pixels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: ImageDims,
    bits: Vec<u8>,
    selected_count: usize,
}

impl BinaryMask {
    /// Bits must be 0 or 1, one per pixel, row-major.
    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        let dims = ImageDims::plane(height, width)?;
        if bits.len() != dims.pixel_count() {
            return Err(Error::argument(format!(
                "expected {} mask bits, got {}",
                dims.pixel_count(),
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::argument("mask bits must be 0 or 1"));
        }
        let selected_count = bits.iter().map(|&b| b as usize).sum();
        Ok(BinaryMask {
            dims,
            bits,
            selected_count,
        })
    }

    pub fn filled(height: usize, width: usize, bit: bool) -> Result<Self> {
        let n = height * width;
        Self::from_bits(height, width, vec![u8::from(bit); n])
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn selected_count(&self) -> usize {
        self.selected_count
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.dims.width + col] == 1
    }

    pub fn retention_fraction(&self) -> f64 {
        self.selected_count as f64 / self.dims.pixel_count() as f64
    }

    /// Hex SHA-256 over the dims and bits; used as provenance in reports.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dims.height as u64).to_le_bytes());
        hasher.update((self.dims.width as u64).to_le_bytes());
        hasher.update(&self.bits);
        hex::encode(hasher.finalize())
    }

    /// 8-bit grayscale PNG, 1 ↦ 255 and 0 ↦ 0.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| b * 255).collect();
        write_png(
            path.as_ref(),
            &bytes,
            self.dims.width,
            self.dims.height,
            image::ExtendedColorType::L8,
        )
    }

    /// Reads a mask PNG; only the levels 0 and 255 are accepted.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let gray = crate::image::open_raster(path)?.to_luma8();
        let (w, h) = gray.dimensions();
        let bits = gray
            .into_raw()
            .into_iter()
            .map(|v| match v {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::format(
                    path,
                    format!("mask pixel value {other} is neither 0 nor 255"),
                )),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_bits(h as usize, w as usize, bits)
    }
}

/// Summary of one mask build, serialized as the mask's JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskBuildReport {
    #[serde(flatten)]
    pub spec: MaskSpec,
    /// Mean-face red value of the last (k-th) selected pixel.
    pub threshold_value: f64,
    pub retention_fraction: f64,
    /// Pixels anywhere in the plane whose value equals `threshold_value`.
    pub tie_count_at_threshold: usize,
}

/// Per-pixel, per-channel arithmetic mean, accumulated sequentially.
pub fn mean_face<'a, I>(images: I) -> Result<Image>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut iter = images.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::argument("mean face needs at least one image"))?;
    let dims = first.dims();
    let mut sum = first.as_slice().to_vec();
    let mut n = 1usize;
    for img in iter {
        if img.dims() != dims {
            return Err(Error::argument(format!(
                "mean face dims mismatch: {dims} vs {}",
                img.dims()
            )));
        }
        for (acc, v) in sum.iter_mut().zip(img.as_slice()) {
            *acc += v;
        }
        n += 1;
    }
    let inv = n as f64;
    for v in &mut sum {
        *v /= inv;
    }
    Ok(Image::from_vec_unchecked(dims, sum))
}

/// Keeps the `top_percent` highest-valued pixels of `plane`.
pub fn select_top_percent(plane: &ChannelPlane, top_percent: f64) -> Result<(BinaryMask, MaskBuildReport)> {
    let dims = plane.dims();
    let spec = MaskSpec::new(top_percent, ImageDims { channels: 3, ..dims })?;
    let values = plane.values();
    let k = spec.selected_count();

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut bits = vec![0u8; values.len()];
    for &i in &order[..k] {
        bits[i] = 1;
    }
    let threshold_value = values[order[k - 1]];
    let tie_count_at_threshold = values.iter().filter(|&&v| v == threshold_value).count();

    let mask = BinaryMask {
        dims,
        bits,
        selected_count: k,
    };
    let report = MaskBuildReport {
        spec,
        threshold_value,
        retention_fraction: mask.retention_fraction(),
        tie_count_at_threshold,
    };
    Ok((mask, report))
}

/// Builds the ROI mask from the positive samples of a training split.
///
/// Samples from any other split are refused so that validation or test
/// images can never shape the mask.
pub fn build_mask(train: &LabeledDataset, spec: &MaskSpec) -> Result<(BinaryMask, MaskBuildReport)> {
    spec.validate()?;
    if train.split() != Split::Train {
        return Err(Error::argument(format!(
            "mask must be built from the train split, got {}",
            train.split()
        )));
    }
    if let Some(dims) = train.dims() {
        if dims != spec.dims {
            return Err(Error::argument(format!(
                "mask spec dims {} do not match dataset dims {dims}",
                spec.dims
            )));
        }
    }
    let mean = mean_face(train.positives())?;
    let red = extract_channel(&mean, 0)?;
    select_top_percent(&red, spec.top_percent)
}

/// Multiplies every channel of each pixel by its mask bit.
pub fn apply_mask(img: &Image, mask: &BinaryMask) -> Result<Image> {
    let dims = img.dims();
    if !dims.same_spatial(&mask.dims) {
        return Err(Error::argument(format!(
            "mask {}x{} does not match image {dims}",
            mask.dims.height, mask.dims.width
        )));
    }
    let data = img
        .as_slice()
        .chunks_exact(dims.channels)
        .zip(&mask.bits)
        .flat_map(|(px, &bit)| px.iter().map(move |&v| if bit == 1 { v } else { 0.0 }))
        .collect();
    Ok(Image::from_vec_unchecked(dims, data))
}

/// Applies one mask to every image, preserving labels and order.
pub fn mask_dataset(data: &LabeledDataset, mask: &BinaryMask) -> Result<LabeledDataset> {
    data.try_map_images(|img| apply_mask(img, mask))
}

/// Axis-aligned pixel rectangle `[top, top + height) × [left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row)
            && (self.left..self.left + self.width).contains(&col)
    }

    fn check_within(&self, dims: ImageDims, name: &str) -> Result<()> {
        if self.area() == 0 {
            return Err(Error::argument(format!("{name} box is empty")));
        }
        if self.top + self.height > dims.height || self.left + self.width > dims.width {
            return Err(Error::argument(format!(
                "{name} box {self:?} exceeds {}x{}",
                dims.height, dims.width
            )));
        }
        Ok(())
    }
}

/// Identity-revealing regions used as privacy-audit ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkBoxes {
    pub left_eye: PixelRect,
    pub right_eye: PixelRect,
    pub mouth: PixelRect,
}

impl LandmarkBoxes {
    pub fn validate(&self, dims: ImageDims) -> Result<()> {
        self.left_eye.check_within(dims, "left_eye")?;
        self.right_eye.check_within(dims, "right_eye")?;
        self.mouth.check_within(dims, "mouth")
    }

    fn named(&self) -> [(&'static str, PixelRect); 3] {
        [
            ("left_eye", self.left_eye),
            ("right_eye", self.right_eye),
            ("mouth", self.mouth),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRetention {
    pub region: String,
    pub area: usize,
    pub retained: usize,
    pub fraction: f64,
}

/// How much of each identity region survives masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAudit {
    pub regions: Vec<RegionRetention>,
    /// Retained fraction over the union of all regions.
    pub identity_region_retention: f64,
}

pub fn privacy_audit(mask: &BinaryMask, boxes: &LandmarkBoxes) -> Result<PrivacyAudit> {
    boxes.validate(mask.dims)?;
    let named = boxes.named();
    let mut regions = Vec::with_capacity(named.len());
    for (name, rect) in named {
        let mut retained = 0;
        for r in rect.top..rect.top + rect.height {
            for c in rect.left..rect.left + rect.width {
                retained += usize::from(mask.is_set(r, c));
            }
        }
        regions.push(RegionRetention {
            region: name.to_string(),
            area: rect.area(),
            retained,
            fraction: retained as f64 / rect.area() as f64,
        });
    }

    let (mut union_area, mut union_kept) = (0usize, 0usize);
    for r in 0..mask.dims.height {
        for c in 0..mask.dims.width {
            if named.iter().any(|(_, rect)| rect.contains(r, c)) {
                union_area += 1;
                union_kept += usize::from(mask.is_set(r, c));
            }
        }
    }
    Ok(PrivacyAudit {
        regions,
        identity_region_retention: union_kept as f64 / union_area as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Sample};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn plane(h: usize, w: usize, values: Vec<f64>) -> ChannelPlane {
        ChannelPlane::from_vec(h, w, values).unwrap()
    }

    fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> Image {
        let dims = ImageDims::rgb(h, w).unwrap();
        let data = (0..dims.value_count()).map(|_| rng.random::<f64>()).collect();
        Image::from_vec(dims, data).unwrap()
    }

    /// Sort-everything reference: rank all (value, index) pairs, take k.
    fn oracle_selection(values: &[f64], k: usize) -> Vec<u8> {
        let mut pairs: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut bits = vec![0; values.len()];
        for (_, i) in pairs.into_iter().take(k) {
            bits[i] = 1;
        }
        bits
    }

    #[test]
    fn counts_are_exact_ceilings() {
        assert_eq!(selected_count(25.0, 4), 1);
        assert_eq!(selected_count(29.0, 19500), 5655);
        assert_eq!(selected_count(1.0, 4), 1);
        assert_eq!(selected_count(100.0, 7), 7);
        assert_eq!(selected_count(17.0, 256), 44); // 43.52
        for t in 20..=35 {
            assert_eq!(selected_count(t as f64, 19500), t * 195);
        }
    }

    #[test]
    fn spec_rejects_bad_percent() {
        let dims = ImageDims::canonical();
        assert!(MaskSpec::new(0.0, dims).is_err());
        assert!(MaskSpec::new(100.5, dims).is_err());
        assert!(MaskSpec::new(f64::NAN, dims).is_err());
        assert!(MaskSpec::new(100.0, dims).is_ok());
    }

    #[test]
    fn top_quarter_of_four() {
        let p = plane(2, 2, [10.0, 20.0, 30.0, 40.0].map(|v| v / 255.0).to_vec());
        let (mask, report) = select_top_percent(&p, 25.0).unwrap();
        assert_eq!(mask.bits(), &[0, 0, 0, 1]);
        assert_eq!(report.threshold_value, 40.0 / 255.0);
        assert_eq!(report.tie_count_at_threshold, 1);
    }

    #[test]
    fn ties_broken_row_major() {
        let p = plane(2, 2, vec![0.5; 4]);
        let (mask, report) = select_top_percent(&p, 50.0).unwrap();
        assert_eq!(mask.bits(), &[1, 1, 0, 0]);
        assert_eq!(report.tie_count_at_threshold, 4);
    }

    #[test]
    fn full_selection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let p = plane(3, 5, (0..15).map(|_| rng.random()).collect());
        let (mask, report) = select_top_percent(&p, 100.0).unwrap();
        assert!(mask.bits().iter().all(|&b| b == 1));
        assert_eq!(report.retention_fraction, 1.0);
    }

    #[test]
    fn mean_face_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = random_image(4, 3, &mut rng);
        assert_eq!(mean_face([&a]).unwrap(), a);

        let b = random_image(4, 3, &mut rng);
        let m = mean_face([&a, &b]).unwrap();
        for i in 0..36 {
            assert!((m.as_slice()[i] - (a.as_slice()[i] + b.as_slice()[i]) / 2.0).abs() < 1e-15);
        }

        let imgs: Vec<Image> = (0..5).map(|_| random_image(6, 5, &mut rng)).collect();
        let m = mean_face(&imgs).unwrap();
        for r in 0..6 {
            for c in 0..5 {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for img in &imgs {
                        acc += img.get(r, c, ch);
                    }
                    assert!((m.get(r, c, ch) - acc / 5.0).abs() < 1e-12);
                }
            }
        }

        assert!(mean_face(std::iter::empty::<&Image>()).is_err());
        let odd = random_image(3, 3, &mut rng);
        assert!(mean_face([&a, &odd]).is_err());
    }

    fn train_set(images: Vec<Image>, label: Label, split: Split) -> LabeledDataset {
        let samples = images.into_iter().map(|image| Sample { image, label }).collect();
        LabeledDataset::new(split, samples, None).unwrap()
    }

    #[test]
    fn build_mask_uses_positive_red_mean() {
        let dims = ImageDims::rgb(2, 2).unwrap();
        let mk = |reds: [f64; 4]| {
            let data = reds.iter().flat_map(|&r| [r, 0.3, 0.3]).collect();
            Image::from_vec(dims, data).unwrap()
        };
        let mut samples = vec![
            Sample { image: mk([0.1, 0.9, 0.2, 0.3]), label: Label::Positive },
            Sample { image: mk([0.3, 0.7, 0.2, 0.9]), label: Label::Positive },
        ];
        // A negative with extreme red at pixel 0 must be ignored.
        samples.push(Sample { image: mk([1.0, 0.0, 0.0, 0.0]), label: Label::Negative });
        let ds = LabeledDataset::new(Split::Train, samples, None).unwrap();
        let (mask, report) = build_mask(&ds, &MaskSpec::new(50.0, dims).unwrap()).unwrap();
        assert_eq!(mask.bits(), &[0, 1, 0, 1]);
        assert!((report.threshold_value - 0.6).abs() < 1e-15);
    }

    #[test]
    fn build_mask_refuses_other_splits_and_empty() {
        let dims = ImageDims::rgb(2, 2).unwrap();
        let spec = MaskSpec::new(50.0, dims).unwrap();
        let img = Image::zeros(dims).unwrap();
        let val = train_set(vec![img.clone()], Label::Positive, Split::Val);
        assert!(build_mask(&val, &spec).is_err());
        let negs = train_set(vec![img.clone()], Label::Negative, Split::Train);
        assert!(build_mask(&negs, &spec).is_err());
        let wrong = MaskSpec::new(50.0, ImageDims::rgb(3, 2).unwrap()).unwrap();
        let pos = train_set(vec![img], Label::Positive, Split::Train);
        assert!(build_mask(&pos, &wrong).is_err());
    }

    #[test]
    fn apply_mask_identity_annihilator_pointwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let img = random_image(5, 4, &mut rng);
        let ones = BinaryMask::filled(5, 4, true).unwrap();
        let zeros = BinaryMask::filled(5, 4, false).unwrap();
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        assert!(apply_mask(&img, &zeros).unwrap().as_slice().iter().all(|&v| v == 0.0));

        let bits: Vec<u8> = (0..20).map(|_| rng.random_range(0..2)).collect();
        let mask = BinaryMask::from_bits(5, 4, bits.clone()).unwrap();
        let out = apply_mask(&img, &mask).unwrap();
        for i in 0..20 {
            for ch in 0..3 {
                assert_eq!(out.as_slice()[3 * i + ch], img.as_slice()[3 * i + ch] * bits[i] as f64);
            }
        }
        let small = BinaryMask::filled(4, 4, true).unwrap();
        assert!(apply_mask(&img, &small).is_err());
    }

    #[test]
    fn mask_dataset_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let empty = LabeledDataset::empty(Split::Test);
        let mask = BinaryMask::filled(3, 3, true).unwrap();
        assert!(mask_dataset(&empty, &mask).unwrap().is_empty());

        let imgs: Vec<Image> = (0..3).map(|_| random_image(3, 3, &mut rng)).collect();
        let ds = train_set(imgs, Label::Positive, Split::Val);
        assert_eq!(mask_dataset(&ds, &mask).unwrap(), ds);

        let bits = (0..9).map(|_| rng.random_range(0..2)).collect();
        let mask = BinaryMask::from_bits(3, 3, bits).unwrap();
        let out = mask_dataset(&ds, &mask).unwrap();
        assert_eq!(out.split(), Split::Val);
        for (o, s) in out.samples().iter().zip(ds.samples()) {
            assert_eq!(o.label, s.label);
            assert_eq!(o.image, apply_mask(&s.image, &mask).unwrap());
        }
    }

    fn boxes() -> LandmarkBoxes {
        LandmarkBoxes {
            left_eye: PixelRect { top: 1, left: 1, height: 2, width: 2 },
            right_eye: PixelRect { top: 1, left: 5, height: 2, width: 2 },
            mouth: PixelRect { top: 5, left: 2, height: 2, width: 4 },
        }
    }

    #[test]
    fn audit_extremes_and_checkerboard() {
        let zeros = BinaryMask::filled(8, 8, false).unwrap();
        let a = privacy_audit(&zeros, &boxes()).unwrap();
        assert!(a.regions.iter().all(|r| r.fraction == 0.0));
        assert_eq!(a.identity_region_retention, 0.0);

        let ones = BinaryMask::filled(8, 8, true).unwrap();
        let a = privacy_audit(&ones, &boxes()).unwrap();
        assert!(a.regions.iter().all(|r| r.fraction == 1.0));
        assert_eq!(a.identity_region_retention, 1.0);

        let bits = (0..64).map(|i| ((i / 8 + i % 8) % 2) as u8).collect();
        let checker = BinaryMask::from_bits(8, 8, bits).unwrap();
        let a = privacy_audit(&checker, &boxes()).unwrap();
        assert!(a.regions.iter().all(|r| r.fraction == 0.5));
        assert_eq!(a.identity_region_retention, 0.5);
    }

    #[test]
    fn audit_rejects_out_of_bounds() {
        let mask = BinaryMask::filled(6, 6, true).unwrap();
        assert!(privacy_audit(&mask, &boxes()).is_err());
        let mut b = boxes();
        b.mouth.width = 0;
        assert!(privacy_audit(&BinaryMask::filled(8, 8, true).unwrap(), &b).is_err());
    }

    #[test]
    fn mask_png_round_trip_and_strict_levels() {
        let dir = tempfile::tempdir().unwrap();
        let bits = (0..12).map(|i| (i % 3 == 0) as u8).collect();
        let mask = BinaryMask::from_bits(3, 4, bits).unwrap();
        let path = dir.path().join("m.png");
        mask.save(&path).unwrap();
        assert_eq!(BinaryMask::load(&path).unwrap(), mask);

        let gray = dir.path().join("gray.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([128])).save(&gray).unwrap();
        assert!(matches!(BinaryMask::load(&gray).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn report_json_keys() {
        let p = plane(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let (_, report) = select_top_percent(&p, 50.0).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["dims", "retention_fraction", "threshold_value", "tie_count_at_threshold", "top_percent"]
        );
        let back: MaskBuildReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    fn quantized_plane(h: usize, w: usize, levels: u32, seed: u64) -> ChannelPlane {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..h * w)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        plane(h, w, values)
    }

    proptest! {
        #[test]
        fn matches_sort_oracle(h in 1usize..=8, w in 1usize..=8, levels in 1u32..6, seed in any::<u64>(), t in 1.0f64..=100.0) {
            let p = quantized_plane(h, w, levels, seed);
            let (mask, report) = select_top_percent(&p, t).unwrap();
            let k = selected_count(t, h * w);
            prop_assert_eq!(mask.bits(), &oracle_selection(p.values(), k)[..]);
            prop_assert_eq!(mask.selected_count(), k);
            for (i, &v) in p.values().iter().enumerate() {
                if mask.bits()[i] == 1 {
                    prop_assert!(v >= report.threshold_value);
                } else {
                    prop_assert!(v <= report.threshold_value);
                }
            }
        }

        #[test]
        fn nested_as_percent_grows(seed in any::<u64>(), t1 in 1.0f64..=100.0, t2 in 1.0f64..=100.0) {
            let p = quantized_plane(8, 8, 4, seed);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (a, _) = select_top_percent(&p, lo).unwrap();
            let (b, _) = select_top_percent(&p, hi).unwrap();
            prop_assert!(a.bits().iter().zip(b.bits()).all(|(&x, &y)| x <= y));
        }

        #[test]
        fn red_scaling_keeps_selection(seed in any::<u64>(), c in 0.01f64..=1.0, t in 1.0f64..=100.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let imgs: Vec<Image> = (0..3).map(|_| random_image(6, 6, &mut rng)).collect();
            let scaled: Vec<Image> = imgs.iter().map(|img| {
                let data = img.as_slice().iter().enumerate()
                    .map(|(i, &v)| if i % 3 == 0 { v * c } else { v })
                    .collect();
                Image::from_vec(img.dims(), data).unwrap()
            }).collect();
            let spec = MaskSpec::new(t, ImageDims::rgb(6, 6).unwrap()).unwrap();
            let (a, ra) = build_mask(&train_set(imgs, Label::Positive, Split::Train), &spec).unwrap();
            let (b, rb) = build_mask(&train_set(scaled, Label::Positive, Split::Train), &spec).unwrap();
            prop_assert_eq!(a.bits(), b.bits());
            prop_assert!((rb.threshold_value - c * ra.threshold_value).abs() < 1e-12);
        }

        #[test]
        fn masking_is_idempotent(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(5, 6, &mut rng);
            let bits = (0..30).map(|_| rng.random_range(0..2)).collect();
            let mask = BinaryMask::from_bits(5, 6, bits).unwrap();
            let once = apply_mask(&img, &mask).unwrap();
            prop_assert_eq!(apply_mask(&once, &mask).unwrap(), once);
        }
    }
}
