//! Dataset registry: a directory tree `<dataset>/{images,masks}/<id>.pgm|ppm`
//! plus a tab-separated manifest of `id<TAB>domain<TAB>dataset_name<TAB>label?`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{green_channel, load_image, load_mask, Domain, LoadedImage, PictureLabel, SampleRecord};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One manifest row.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
    pub dataset_name: String,
    pub picture_label: Option<PictureLabel>,
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        let label = self.picture_label.map(|l| l.as_str()).unwrap_or("");
        format!(
            "{}\t{}\t{}\t{}",
            self.id,
            self.domain.as_str(),
            self.dataset_name,
            label
        )
    }
}

fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<ManifestEntry> {
    let err = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason: format!("line {lineno}: {reason}"),
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 3 || fields.len() > 4 {
        return Err(err(format!("expected 3-4 tab-separated fields, got {}", fields.len())));
    }
    let domain = match fields[1] {
        "target" => Domain::Target,
        "source" => Domain::Source,
        other => return Err(err(format!("unknown domain `{other}`"))),
    };
    let picture_label = match fields.get(3).copied().unwrap_or("") {
        "" => None,
        "similar" => Some(PictureLabel::Similar),
        "dissimilar" => Some(PictureLabel::Dissimilar),
        other => return Err(err(format!("unknown picture label `{other}`"))),
    };
    if fields[0].is_empty() {
        return Err(err("empty id".into()));
    }
    Ok(ManifestEntry {
        id: fields[0].to_string(),
        domain,
        dataset_name: fields[2].to_string(),
        picture_label,
    })
}

/// Writes a manifest file for a set of entries.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads every sample listed in `<dir>/manifest.tsv`.
///
/// Images live in `<dir>/images/<id>.ppm` (falling back to `.pgm`),
/// masks in `<dir>/masks/<id>.pgm`. Color images are reduced to their
/// green channel on load. Target records must have a mask.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<SampleRecord>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_line(&manifest_path, i + 1, line)?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest {
                path: manifest_path.clone(),
                reason: format!("duplicate id `{}`", entry.id),
            });
        }
        let ppm = dir.join("images").join(format!("{}.ppm", entry.id));
        let pgm = dir.join("images").join(format!("{}.pgm", entry.id));
        let img_path = if ppm.exists() { ppm } else { pgm };
        let image = match load_image(&img_path)? {
            LoadedImage::Rgb(rgb) => green_channel(&rgb),
            LoadedImage::Gray(g) => g,
        };
        let mask_path = dir.join("masks").join(format!("{}.pgm", entry.id));
        let mask = if mask_path.exists() {
            Some(load_mask(&mask_path)?)
        } else {
            None
        };
        if entry.domain == Domain::Target && mask.is_none() {
            return Err(Error::Manifest {
                path: manifest_path.clone(),
                reason: format!("target record `{}` has no mask", entry.id),
            });
        }
        if let Some(m) = &mask {
            if m.width() != image.width() || m.height() != image.height() {
                return Err(Error::Manifest {
                    path: manifest_path.clone(),
                    reason: format!("mask for `{}` does not match image dimensions", entry.id),
                });
            }
        }
        records.push(SampleRecord {
            id: entry.id,
            domain: entry.domain,
            dataset_name: entry.dataset_name,
            image,
            mask,
            picture_label: entry.picture_label,
        });
    }
    Ok(records)
}
