//! Image types, binary PGM/PPM i/o, the dataset registry, and a seeded
//! synthetic vessel-image generator for desk-scale experiments.

mod pnm;
mod registry;
mod synth;

pub use pnm::{load_image, load_mask, save_gray_pgm, save_mask_pgm, save_rgb_ppm, LoadedImage};
pub use registry::{load_dataset_dir, write_manifest, ManifestEntry, MANIFEST_NAME};
pub use synth::{synth_vessels, SynthStyle};

use crate::error::{Error, Result};

/// Declared value range of a [`GrayImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeTag {
    /// All pixels lie in `[0, 1]`.
    Unit,
    /// Standardized pixels, unbounded.
    ZScore,
}

/// Three-plane color image with values in `[0, 1]`, planes ordered R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    planes: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn new(width: usize, height: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be nonzero".into()));
        }
        for (i, plane) in planes.iter().enumerate() {
            if plane.len() != width * height {
                return Err(Error::Shape(format!(
                    "plane {i} has {} values, expected {}",
                    plane.len(),
                    width * height
                )));
            }
            if plane.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Shape(format!("plane {i} has values outside [0,1]")));
            }
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn plane(&self, idx: usize) -> &[f64] {
        &self.planes[idx]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.planes[0][i], self.planes[1][i], self.planes[2][i]]
    }
}

/// Single-plane image of real-valued pixels with a declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    range: RangeTag,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, range: RangeTag) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be nonzero".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if range == RangeTag::Unit && pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("unit-tagged image has values outside [0,1]".into()));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("image has non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
            range,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Copies the `size`×`size` sub-rectangle with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Result<GrayImage> {
        if x + size > self.width || y + size > self.height {
            return Err(Error::Shape(format!(
                "crop ({x},{y})+{size} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(size * size);
        for row in y..y + size {
            let start = row * self.width + x;
            out.extend_from_slice(&self.pixels[start..start + size]);
        }
        GrayImage::new(size, size, out, self.range)
    }
}

/// Binary per-pixel mask; values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("mask dimensions must be nonzero".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = if v > 0 { 1 } else { 0 };
    }

    /// Fraction of pixels set to 1.
    pub fn foreground_fraction(&self) -> f64 {
        let ones: usize = self.pixels.iter().map(|&v| v as usize).sum();
        ones as f64 / self.pixels.len() as f64
    }

    pub fn crop(&self, x: usize, y: usize, size: usize) -> Result<MaskImage> {
        if x + size > self.width || y + size > self.height {
            return Err(Error::Shape(format!(
                "crop ({x},{y})+{size} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(size * size);
        for row in y..y + size {
            let start = row * self.width + x;
            out.extend_from_slice(&self.pixels[start..start + size]);
        }
        MaskImage::new(size, size, out)
    }
}

/// Which side of the transfer problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Target,
    Source,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Target => "target",
            Domain::Source => "source",
        }
    }
}

/// Picture-level supervision for the clustering seed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PictureLabel {
    Similar,
    Dissimilar,
}

impl PictureLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PictureLabel::Similar => "similar",
            PictureLabel::Dissimilar => "dissimilar",
        }
    }
}

/// One dataset sample: a grayscale image plus optional mask and seed label.
///
/// Target-domain records always carry a mask; `picture_label` is present
/// exactly when the record is part of the labeled seed set.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub domain: Domain,
    pub dataset_name: String,
    pub image: GrayImage,
    pub mask: Option<MaskImage>,
    pub picture_label: Option<PictureLabel>,
}

/// Second (green) plane of an RGB image, unit-tagged.
pub fn green_channel(img: &RgbImage) -> GrayImage {
    GrayImage::new(
        img.width(),
        img.height(),
        img.plane(1).to_vec(),
        RangeTag::Unit,
    )
    .expect("green plane of a valid RgbImage is a valid unit image")
}
