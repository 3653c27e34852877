//! Deterministic patch extraction over a stride grid and overlap-averaged
//! stitching of predicted patches back into full images.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imgio::{GrayImage, MaskImage};

/// Row-major grid of square patch origins covering an image completely.
///
/// Origins step by `stride`; whenever the last regular patch in an axis
/// does not touch the border, one clamped origin is appended so coverage
/// is total while every patch stays inside the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    image_w: usize,
    image_h: usize,
    patch: usize,
    stride: usize,
    origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn image_w(&self) -> usize {
        self.image_w
    }

    pub fn image_h(&self) -> usize {
        self.image_h
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }
}

fn axis_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut xs: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&x| x + patch <= extent)
        .collect();
    let last = *xs.last().expect("patch <= extent guarantees origin 0");
    if last + patch < extent {
        xs.push(extent - patch);
    }
    xs
}

/// Plans the deterministic prediction grid for an image.
pub fn plan_grid(image_w: usize, image_h: usize, patch: usize, stride: usize) -> Result<PatchGrid> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if patch == 0 || patch > image_w.min(image_h) {
        return Err(Error::Config(format!(
            "patch {patch} must fit inside image {image_w}x{image_h}"
        )));
    }
    if stride > patch {
        return Err(Error::Config(format!(
            "stride {stride} must not exceed patch {patch}"
        )));
    }
    let xs = axis_origins(image_w, patch, stride);
    let ys = axis_origins(image_h, patch, stride);
    let mut origins = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            origins.push((x, y));
        }
    }
    Ok(PatchGrid {
        image_w,
        image_h,
        patch,
        stride,
        origins,
    })
}

/// Patches (or per-patch probability maps) in grid-origin order.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub grid: PatchGrid,
    pub patches: Vec<GrayImage>,
}

impl PatchSet {
    pub fn new(grid: PatchGrid, patches: Vec<GrayImage>) -> Result<Self> {
        if patches.len() != grid.origins.len() {
            return Err(Error::Shape(format!(
                "{} patches for {} origins",
                patches.len(),
                grid.origins.len()
            )));
        }
        for p in &patches {
            if p.width() != grid.patch || p.height() != grid.patch {
                return Err(Error::Shape(format!(
                    "patch {}x{} does not match grid patch {}",
                    p.width(),
                    p.height(),
                    grid.patch
                )));
            }
        }
        Ok(Self { grid, patches })
    }
}

/// Copies every grid patch out of the image, verbatim.
pub fn extract(img: &GrayImage, grid: &PatchGrid) -> Result<PatchSet> {
    if img.width() != grid.image_w || img.height() != grid.image_h {
        return Err(Error::Shape(format!(
            "grid {}x{} does not match image {}x{}",
            grid.image_w,
            grid.image_h,
            img.width(),
            img.height()
        )));
    }
    let patches = grid
        .origins
        .iter()
        .map(|&(x, y)| img.crop(x, y, grid.patch))
        .collect::<Result<Vec<_>>>()?;
    PatchSet::new(grid.clone(), patches)
}

/// Crops the mask at every grid origin, aligned with [`extract`].
pub fn extract_mask(mask: &MaskImage, grid: &PatchGrid) -> Result<Vec<MaskImage>> {
    if mask.width() != grid.image_w || mask.height() != grid.image_h {
        return Err(Error::Shape("grid does not match mask dimensions".into()));
    }
    grid.origins
        .iter()
        .map(|&(x, y)| mask.crop(x, y, grid.patch))
        .collect()
}

/// Reassembles patches into a full image; overlapping pixels take the
/// arithmetic mean of all covering patches.
///
/// The mean is accumulated as `first + mean(deviations from first)` so a
/// pixel covered by identical values reproduces that value bit-exactly,
/// which makes `stitch(extract(img))` the identity.
pub fn stitch(set: &PatchSet) -> Result<GrayImage> {
    let grid = &set.grid;
    let n = grid.image_w * grid.image_h;
    let mut first = vec![0.0f64; n];
    let mut dev_sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (&(ox, oy), patch) in grid.origins.iter().zip(&set.patches) {
        for py in 0..grid.patch {
            let row = (oy + py) * grid.image_w + ox;
            for px in 0..grid.patch {
                let idx = row + px;
                let v = patch.get(px, py);
                if count[idx] == 0 {
                    first[idx] = v;
                } else {
                    dev_sum[idx] += v - first[idx];
                }
                count[idx] += 1;
            }
        }
    }
    // Full coverage is a grid invariant.
    debug_assert!(count.iter().all(|&c| c >= 1));
    let range = match set.patches.first() {
        Some(p) => p.range(),
        None => return Err(Error::Shape("empty patch set".into())),
    };
    let pixels: Vec<f64> = (0..n)
        .map(|i| first[i] + dev_sum[i] / count[i] as f64)
        .collect();
    GrayImage::new(grid.image_w, grid.image_h, pixels, range)
}

/// Uniformly samples `count` valid patch origins for training augmentation.
///
/// Distinct from the deterministic prediction grid; the caller supplies a
/// seeded generator.
pub fn sample_origins(
    rng: &mut impl Rng,
    image_w: usize,
    image_h: usize,
    patch: usize,
    count: usize,
) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || patch > image_w.min(image_h) {
        return Err(Error::Config(format!(
            "patch {patch} must fit inside image {image_w}x{image_h}"
        )));
    }
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=image_w - patch),
                rng.random_range(0..=image_h - patch),
            )
        })
        .collect())
}
