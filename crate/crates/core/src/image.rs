//! Canonical image representation, raster I/O, crop/resize, and channel planes.
//!
//! Intensities are kept as `f64` in `[0, 1]`; files on disk are 8-bit. Pixel
//! storage is row-major and channel-interleaved, so pixel `i` of an RGB image
//! occupies `data[3 * i .. 3 * i + 3]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical face height in pixels.
pub const CANONICAL_HEIGHT: usize = 150;
/// Canonical face width in pixels.
pub const CANONICAL_WIDTH: usize = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        let dims = ImageDims {
            height,
            width,
            channels,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn rgb(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 3)
    }

    pub fn plane(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 1)
    }

    /// 150 × 130 × 3, height first.
    pub fn canonical() -> Self {
        ImageDims {
            height: CANONICAL_HEIGHT,
            width: CANONICAL_WIDTH,
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::argument(format!(
                "image dims must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::argument(format!(
                "channel count must be 1 or 3, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn value_count(&self) -> usize {
        self.pixel_count() * self.channels
    }

    /// Same spatial extent with a single channel.
    pub fn as_plane(&self) -> ImageDims {
        ImageDims {
            channels: 1,
            ..*self
        }
    }

    pub fn same_spatial(&self, other: &ImageDims) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl std::fmt::Display for ImageDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An RGB (or single-channel) image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: ImageDims,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved row-major values. Values outside
    /// `[0, 1]` (or non-finite) are rejected.
    pub fn from_vec(dims: ImageDims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.value_count() {
            return Err(Error::argument(format!(
                "expected {} values for {dims}, got {}",
                dims.value_count(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::argument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Image { dims, data })
    }

    /// Constant-color RGB image.
    pub fn filled(dims: ImageDims, color: [f64; 3]) -> Result<Self> {
        dims.validate()?;
        let data = match dims.channels {
            3 => color
                .iter()
                .copied()
                .cycle()
                .take(dims.value_count())
                .collect(),
            _ => vec![color[0]; dims.value_count()],
        };
        Self::from_vec(dims, data)
    }

    pub fn zeros(dims: ImageDims) -> Result<Self> {
        Self::filled(dims, [0.0; 3])
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Value at (`row`, `col`, `channel`).
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.dims.width + col) * self.dims.channels + channel]
    }

    /// Crate-internal constructor for values already known to be in range.
    pub(crate) fn from_vec_unchecked(dims: ImageDims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.value_count());
        Image { dims, data }
    }

    /// Reads a PNG or JPEG file. Grayscale sources are replicated into three
    /// channels and any alpha channel is discarded.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rgb = open_raster(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let dims = ImageDims::rgb(h as usize, w as usize)?;
        let data = rgb
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect();
        Ok(Image::from_vec_unchecked(dims, data))
    }

    /// Writes an 8-bit PNG, rounding each intensity to the nearest level.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let color = match self.dims.channels {
            3 => image::ExtendedColorType::Rgb8,
            _ => image::ExtendedColorType::L8,
        };
        write_png(path, &bytes, self.dims.width, self.dims.height, color)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn open_raster(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(other) => {
            return Err(Error::format(
                path,
                format!("unsupported raster format {other:?}"),
            ))
        }
        None => return Err(Error::format(path, "unrecognized raster format")),
    }
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

pub(crate) fn write_png(
    path: &Path,
    bytes: &[u8],
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
) -> Result<()> {
    image::save_buffer_with_format(
        path,
        bytes,
        width as u32,
        height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

/// Crops the largest centered region with the target aspect ratio, then
/// resamples it bilinearly (pixel-center aligned) to `target`.
pub fn center_crop_resize(img: &Image, target: ImageDims) -> Result<Image> {
    if target.height == 0 || target.width == 0 {
        return Err(Error::argument("target dims must be non-zero"));
    }
    let src = img.dims;
    let target = ImageDims {
        channels: src.channels,
        ..target
    };
    if src == target {
        return Ok(img.clone());
    }

    // Compare aspect ratios exactly in integers.
    let (crop_h, crop_w) = if src.width * target.height > src.height * target.width {
        let w = (src.height * target.width / target.height).max(1);
        (src.height, w)
    } else {
        let h = (src.width * target.height / target.width).max(1);
        (h, src.width)
    };
    let top = (src.height - crop_h) / 2;
    let left = (src.width - crop_w) / 2;

    let scale_y = crop_h as f64 / target.height as f64;
    let scale_x = crop_w as f64 / target.width as f64;
    let taps = |dst: usize, scale: f64, extent: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..target.width)
        .map(|x| taps(x, scale_x, crop_w))
        .collect();

    let ch = src.channels;
    let mut out = Vec::with_capacity(target.value_count());
    for y in 0..target.height {
        let (y0, y1, fy) = taps(y, scale_y, crop_h);
        for &(x0, x1, fx) in &cols {
            for c in 0..ch {
                let at = |r: usize, q: usize| img.get(top + r, left + q, c);
                let upper = lerp(at(y0, x0), at(y0, x1), fx);
                let lower = lerp(at(y1, x0), at(y1, x1), fx);
                out.push(lerp(upper, lower, fy));
            }
        }
    }
    Ok(Image::from_vec_unchecked(target, out))
}

// Exact when a == b, so constant fields stay constant.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// One channel of an image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlane {
    dims: ImageDims,
    values: Vec<f64>,
}

impl ChannelPlane {
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let dims = ImageDims::plane(height, width)?;
        if values.len() != dims.pixel_count() {
            return Err(Error::argument(format!(
                "expected {} plane values, got {}",
                dims.pixel_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("plane values must be finite"));
        }
        Ok(ChannelPlane { dims, values })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Extracts channel `channel` (0 = red) of an RGB image.
pub fn extract_channel(img: &Image, channel: usize) -> Result<ChannelPlane> {
    if img.dims.channels != 3 {
        return Err(Error::argument("channel extraction needs a 3-channel image"));
    }
    if channel > 2 {
        return Err(Error::argument(format!(
            "channel index {channel} out of range 0..=2"
        )));
    }
    let values = img.data.iter().skip(channel).step_by(3).copied().collect();
    Ok(ChannelPlane {
        dims: img.dims.as_plane(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = ImageDims::rgb(h, w).unwrap();
        let data = (0..dims.value_count()).map(|_| rng.random::<f64>()).collect();
        Image::from_vec(dims, data).unwrap()
    }

    #[test]
    fn dims_reject_zero_and_bad_channels() {
        assert!(ImageDims::rgb(0, 4).is_err());
        assert!(ImageDims::new(4, 4, 2).is_err());
        assert_eq!(ImageDims::canonical().to_string(), "150x130x3");
    }

    #[test]
    fn from_vec_rejects_out_of_range() {
        let dims = ImageDims::rgb(1, 1).unwrap();
        assert!(Image::from_vec(dims, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Image::from_vec(dims, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(Image::from_vec(dims, vec![0.0; 2]).is_err());
    }

    #[test]
    fn white_black_and_mid_gray_load() {
        let dir = tempfile::tempdir().unwrap();
        for (level, expected) in [(255u8, 1.0), (0, 0.0), (128, 128.0 / 255.0)] {
            let path = dir.path().join(format!("{level}.png"));
            let buf = image::RgbImage::from_pixel(2, 2, image::Rgb([level; 3]));
            buf.save(&path).unwrap();
            let img = Image::load(&path).unwrap();
            assert_eq!(img.dims(), ImageDims::rgb(2, 2).unwrap());
            assert!(img.as_slice().iter().all(|&v| v == expected));
        }
        assert!((128.0f64 / 255.0 - 0.50196).abs() < 5e-6);
    }

    #[test]
    fn grayscale_promoted_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::GrayImage::from_fn(3, 2, |x, y| image::Luma([(x * 40 + y * 7) as u8]))
            .save(&path)
            .unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.dims().channels, 3);
        for r in 0..2 {
            for c in 0..3 {
                let expected = f64::from((c * 40 + r * 7) as u8) / 255.0;
                for ch in 0..3 {
                    assert_eq!(img.get(r, c, ch), expected);
                }
            }
        }
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = Image::load(dir.path().join("nope.png")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not an image").unwrap();
        assert!(matches!(Image::load(&junk).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn save_extremes_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        let dims = ImageDims::rgb(3, 2).unwrap();
        for (color, byte) in [(0.0, 0u8), (1.0, 255u8)] {
            let path = dir.path().join(format!("{byte}.png"));
            Image::filled(dims, [color; 3]).unwrap().save(&path).unwrap();
            let raw = image::open(&path).unwrap().to_rgb8();
            assert!(raw.as_raw().iter().all(|&b| b == byte));
        }
        let err = Image::zeros(dims)
            .unwrap()
            .save(dir.path().join("no/such/dir/x.png"))
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn round_trip_error_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        let img = random_image(17, 11, 3);
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        let max_err = img
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 255.0, "max error {max_err}");
    }

    #[test]
    fn crop_resize_identity_and_zero_target() {
        let img = random_image(6, 5, 1);
        assert_eq!(center_crop_resize(&img, img.dims()).unwrap(), img);
        let bad = ImageDims {
            height: 0,
            width: 3,
            channels: 3,
        };
        assert!(center_crop_resize(&img, bad).is_err());
    }

    /// Independent 2x box filter over the full frame.
    fn box_downsample(img: &Image) -> Vec<f64> {
        let d = img.dims();
        let mut out = Vec::new();
        for r in 0..d.height / 2 {
            for c in 0..d.width / 2 {
                for ch in 0..3 {
                    let s = img.get(2 * r, 2 * c, ch)
                        + img.get(2 * r + 1, 2 * c, ch)
                        + img.get(2 * r, 2 * c + 1, ch)
                        + img.get(2 * r + 1, 2 * c + 1, ch);
                    out.push(s / 4.0);
                }
            }
        }
        out
    }

    #[test]
    fn halving_matches_box_filter() {
        let img = random_image(300, 260, 9);
        let out = center_crop_resize(&img, ImageDims::canonical()).unwrap();
        assert_eq!(out.dims(), ImageDims::canonical());
        let oracle = box_downsample(&img);
        for (a, b) in out.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_source_is_center_cropped() {
        // 4x8 source to 2x2: crop the middle 4x4 block, then halve.
        let dims = ImageDims::rgb(4, 8).unwrap();
        let data = (0..32)
            .flat_map(|i| {
                let v = (i % 8) as f64 / 8.0;
                [v, v, v]
            })
            .collect();
        let img = Image::from_vec(dims, data).unwrap();
        let out = center_crop_resize(&img, ImageDims::rgb(2, 2).unwrap()).unwrap();
        // columns 2..6 kept; pairs (2,3) and (4,5) averaged
        assert!((out.get(0, 0, 0) - 2.5 / 8.0).abs() < 1e-12);
        assert!((out.get(1, 1, 2) - 4.5 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn extract_channel_cases() {
        let dims = ImageDims::rgb(3, 4).unwrap();
        let red = Image::filled(dims, [1.0, 0.0, 0.0]).unwrap();
        assert!(extract_channel(&red, 0).unwrap().values().iter().all(|&v| v == 1.0));
        let blue = Image::filled(dims, [0.0, 0.0, 1.0]).unwrap();
        assert!(extract_channel(&blue, 0).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(extract_channel(&blue, 3).is_err());

        let img = random_image(5, 7, 2);
        for ch in 0..3 {
            let plane = extract_channel(&img, ch).unwrap();
            assert_eq!(plane.dims(), ImageDims::plane(5, 7).unwrap());
            for r in 0..5 {
                for c in 0..7 {
                    assert_eq!(plane.values()[r * 7 + c], img.get(r, c, ch));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn constant_field_survives_resize(
            h in 1usize..40, w in 1usize..40, th in 1usize..30, tw in 1usize..30,
            r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0,
        ) {
            let img = Image::filled(ImageDims::rgb(h, w).unwrap(), [r, g, b]).unwrap();
            let out = center_crop_resize(&img, ImageDims::rgb(th, tw).unwrap()).unwrap();
            prop_assert_eq!(out.dims(), ImageDims::rgb(th, tw).unwrap());
            for px in out.as_slice().chunks(3) {
                prop_assert_eq!(px, &[r, g, b][..]);
            }
        }

        #[test]
        fn resize_idempotent_at_target(h in 2usize..30, w in 2usize..30, th in 1usize..20, tw in 1usize..20, seed in any::<u64>()) {
            let img = random_image(h, w, seed);
            let target = ImageDims::rgb(th, tw).unwrap();
            let once = center_crop_resize(&img, target).unwrap();
            let twice = center_crop_resize(&once, target).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
