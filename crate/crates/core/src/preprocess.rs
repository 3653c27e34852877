//! Intensity preprocessing: per-image standardization, contrast-limited
//! adaptive histogram equalization, and gamma adjustment.

use crate::error::{Error, Result};
use crate::imgio::{GrayImage, RangeTag};

/// Mean and population standard deviation of a standardized image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

/// CLAHE tile grid and clipping configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheConfig {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Clip threshold as a multiple of the uniform histogram bin height.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheConfig {
    fn validate(&self) -> Result<()> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::Config("tile counts must be positive".into()));
        }
        if self.clip_limit <= 1.0 {
            return Err(Error::Config(format!(
                "clip_limit must exceed 1, got {}",
                self.clip_limit
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be at least 2".into()));
        }
        Ok(())
    }
}

/// Standardizes an image to zero mean and unit population std.
///
/// A constant image maps to all zeros with `stats.std == 0` rather than
/// raising an error, so degenerate tiles do not abort batch runs.
pub fn normalize(img: &GrayImage) -> (GrayImage, NormalizationStats) {
    let n = img.pixels().len() as f64;
    let mean = img.pixels().iter().sum::<f64>() / n;
    let var = img
        .pixels()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let stats = NormalizationStats { mean, std };
    let pixels = if std > 0.0 {
        img.pixels().iter().map(|&v| (v - mean) / std).collect()
    } else {
        vec![0.0; img.pixels().len()]
    };
    let out = GrayImage::new(img.width(), img.height(), pixels, RangeTag::ZScore)
        .expect("standardized pixels are finite");
    (out, stats)
}

/// Affine min-max map onto `[0, 1]`; a constant input maps to all 0.5.
pub fn rescale_unit(img: &GrayImage) -> GrayImage {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in img.pixels() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pixels = if hi > lo {
        let span = hi - lo;
        img.pixels()
            .iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; img.pixels().len()]
    };
    GrayImage::new(img.width(), img.height(), pixels, RangeTag::Unit)
        .expect("rescaled pixels lie in [0,1]")
}

fn level_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

// Per-tile clipped-histogram CDF lookup table mapping level -> [0, 1].
fn tile_lut(
    img: &GrayImage,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    cfg: &ClaheConfig,
) -> Vec<f64> {
    let bins = cfg.bins;
    let mut hist = vec![0.0f64; bins];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[level_of(img.get(x, y), bins)] += 1.0;
        }
    }
    let total = ((x1 - x0) * (y1 - y0)) as f64;
    let clip = cfg.clip_limit * total / bins as f64;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > clip {
            excess += *h - clip;
            *h = clip;
        }
    }
    let share = excess / bins as f64;
    for h in hist.iter_mut() {
        *h += share;
    }
    let mut lut = Vec::with_capacity(bins);
    let mut cum = 0.0;
    for &h in &hist {
        cum += h;
        lut.push((cum / total).clamp(0.0, 1.0));
    }
    lut
}

/// Contrast-limited adaptive histogram equalization.
///
/// Per-tile histograms over `bins` levels are clipped at
/// `clip_limit * tile_pixels / bins` with the excess redistributed
/// uniformly; each pixel is remapped by bilinear interpolation of the
/// four surrounding tile CDFs. The trailing tile in each axis absorbs
/// any division remainder.
pub fn clahe(img: &GrayImage, cfg: &ClaheConfig) -> Result<GrayImage> {
    cfg.validate()?;
    if img.range() != RangeTag::Unit {
        return Err(Error::Config("clahe requires a unit-range image".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w < cfg.tiles_x || h < cfg.tiles_y {
        return Err(Error::Config(format!(
            "tile grid {}x{} larger than image {w}x{h}",
            cfg.tiles_x, cfg.tiles_y
        )));
    }

    let bounds = |extent: usize, tiles: usize| -> Vec<(usize, usize)> {
        let base = extent / tiles;
        (0..tiles)
            .map(|i| {
                let start = i * base;
                let end = if i + 1 == tiles { extent } else { (i + 1) * base };
                (start, end)
            })
            .collect()
    };
    let xb = bounds(w, cfg.tiles_x);
    let yb = bounds(h, cfg.tiles_y);
    let centers = |b: &[(usize, usize)]| -> Vec<f64> {
        b.iter().map(|&(s, e)| (s + e) as f64 / 2.0 - 0.5).collect()
    };
    let xc = centers(&xb);
    let yc = centers(&yb);

    let mut luts = Vec::with_capacity(cfg.tiles_x * cfg.tiles_y);
    for &(y0, y1) in &yb {
        for &(x0, x1) in &xb {
            luts.push(tile_lut(img, x0, x1, y0, y1, cfg));
        }
    }

    // Bracketing tile indices and interpolation weight along one axis.
    let locate = |pos: f64, centers: &[f64]| -> (usize, usize, f64) {
        if pos <= centers[0] {
            return (0, 0, 0.0);
        }
        if pos >= *centers.last().unwrap() {
            let last = centers.len() - 1;
            return (last, last, 0.0);
        }
        let mut i = 0;
        while centers[i + 1] < pos {
            i += 1;
        }
        let t = (pos - centers[i]) / (centers[i + 1] - centers[i]);
        (i, i + 1, t)
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (iy0, iy1, ty) = locate(y as f64, &yc);
        for x in 0..w {
            let (ix0, ix1, tx) = locate(x as f64, &xc);
            let level = level_of(img.get(x, y), cfg.bins);
            let lut = |tyi: usize, txi: usize| luts[tyi * cfg.tiles_x + txi][level];
            let top = lut(iy0, ix0) * (1.0 - tx) + lut(iy0, ix1) * tx;
            let bot = lut(iy1, ix0) * (1.0 - tx) + lut(iy1, ix1) * tx;
            out.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(w, h, out, RangeTag::Unit)
}

/// Pointwise power map `x -> x^gamma` on a unit-range image.
pub fn gamma_adjust(img: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if img.range() != RangeTag::Unit {
        return Err(Error::Config("gamma adjustment requires a unit-range image".into()));
    }
    let pixels = img.pixels().iter().map(|&v| v.powf(gamma)).collect();
    GrayImage::new(img.width(), img.height(), pixels, RangeTag::Unit)
}

/// The full preprocessing chain: standardize, rescale to `[0, 1]`,
/// CLAHE, then gamma adjustment.
pub fn preprocess_chain(img: &GrayImage, cfg: &ClaheConfig, gamma: f64) -> Result<GrayImage> {
    let (z, _) = normalize(img);
    let unit = rescale_unit(&z);
    let eq = clahe(&unit, cfg)?;
    gamma_adjust(&eq, gamma)
}
