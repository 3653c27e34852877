//! Binary PGM (P5) and PPM (P6) reading and writing.
//!
//! Only maxval 255 is supported; pixels are normalized to `[0, 1]` at load
//! and quantized back to 256 levels on save. Headers are written as
//! `P5\n<w> <h>\n255\n` followed by row-major bytes.

use std::fs;
use std::path::Path;

use super::{GrayImage, MaskImage, RangeTag, RgbImage};
use crate::error::{Error, Result};

/// Result of [`load_image`]: P6 yields RGB, P5 yields grayscale.
#[derive(Debug, Clone)]
pub enum LoadedImage {
    Rgb(RgbImage),
    Gray(GrayImage),
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    // Skips whitespace and '#' comment lines between header fields.
    fn skip_separators(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_number(&mut self, field: &str) -> std::result::Result<usize, String> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format!("missing or non-numeric {field}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| format!("invalid {field}"))?
            .parse::<usize>()
            .map_err(|_| format!("invalid {field}"))
    }
}

fn parse_header(bytes: &[u8]) -> std::result::Result<(&'static str, usize, usize, usize), String> {
    if bytes.len() < 2 {
        return Err("file too short for magic".into());
    }
    let magic = match &bytes[..2] {
        b"P5" => "P5",
        b"P6" => "P6",
        other => {
            return Err(format!(
                "unsupported magic {:?} (expected P5 or P6)",
                String::from_utf8_lossy(other)
            ))
        }
    };
    let mut cur = HeaderCursor::new(&bytes[2..]);
    let width = cur.read_number("width")?;
    let height = cur.read_number("height")?;
    let maxval = cur.read_number("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (must be 255)"));
    }
    if width == 0 || height == 0 {
        return Err("zero width or height".into());
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if cur.pos >= bytes.len() - 2 || !bytes[2 + cur.pos].is_ascii_whitespace() {
        return Err("missing whitespace after maxval".into());
    }
    Ok((magic, width, height, 2 + cur.pos + 1))
}

/// Loads a binary PGM or PPM file, dispatching on the magic number.
pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (magic, width, height, data_start) = parse_header(&bytes).map_err(|reason| {
        Error::PnmFormat {
            format: "PNM",
            path: path.to_path_buf(),
            reason,
        }
    })?;
    let channels = if magic == "P6" { 3 } else { 1 };
    let expected = width * height * channels;
    let data = &bytes[data_start..];
    if data.len() != expected {
        return Err(Error::PnmFormat {
            format: magic,
            path: path.to_path_buf(),
            reason: format!("expected {expected} pixel bytes, found {}", data.len()),
        });
    }
    if magic == "P5" {
        let pixels = data.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(LoadedImage::Gray(GrayImage::new(
            width,
            height,
            pixels,
            RangeTag::Unit,
        )?))
    } else {
        let mut planes = [
            Vec::with_capacity(width * height),
            Vec::with_capacity(width * height),
            Vec::with_capacity(width * height),
        ];
        for px in data.chunks_exact(3) {
            planes[0].push(px[0] as f64 / 255.0);
            planes[1].push(px[1] as f64 / 255.0);
            planes[2].push(px[2] as f64 / 255.0);
        }
        Ok(LoadedImage::Rgb(RgbImage::new(width, height, planes)?))
    }
}

/// Loads a P5 file as a binary mask: pixels >= 0.5 become 1.
pub fn load_mask(path: &Path) -> Result<MaskImage> {
    match load_image(path)? {
        LoadedImage::Gray(g) => {
            let pixels = g.pixels().iter().map(|&v| (v >= 0.5) as u8).collect();
            MaskImage::new(g.width(), g.height(), pixels)
        }
        LoadedImage::Rgb(_) => Err(Error::PnmFormat {
            format: "P6",
            path: path.to_path_buf(),
            reason: "masks must be single-channel PGM".into(),
        }),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a unit-range grayscale image as binary PGM, 256 levels.
pub fn save_gray_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    if img.range() != RangeTag::Unit {
        return Err(Error::Config(
            "only unit-range images can be saved as PGM; rescale first".into(),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Saves a mask as binary PGM with foreground 255 and background 0.
pub fn save_mask_pgm(mask: &MaskImage, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.pixels().iter().map(|&v| if v > 0 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Saves an RGB image as binary PPM, 256 levels per channel.
pub fn save_rgb_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for i in 0..img.width() * img.height() {
        out.push(quantize(img.plane(0)[i]));
        out.push(quantize(img.plane(1)[i]));
        out.push(quantize(img.plane(2)[i]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
