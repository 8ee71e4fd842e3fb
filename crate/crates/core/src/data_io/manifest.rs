use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Sample, Spectrum};
use crate::error::{Error, Result};
use crate::mask::Mask;

pub const HEADER: [&str; 5] = ["image_path", "mask_path", "subject_id", "pmi_hours", "spectrum"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub subject_id: String,
    pub pmi_hours: f64,
    pub spectrum: Spectrum,
}

/// Validated manifest. Relative paths are resolved against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// Reads a comma-separated manifest with the fixed header
/// `image_path,mask_path,subject_id,pmi_hours,spectrum`.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let load_err = |line: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest {
        base_dir,
        records: Vec::new(),
    };
    if text.trim().is_empty() {
        return Ok(manifest);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| load_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(load_err(
            1,
            format!("header must be `{}`, got `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            load_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != HEADER.len() {
            return Err(load_err(line, format!("expected {} fields, got {}", HEADER.len(), row.len())));
        }
        let field_err = |field: &str, message: String| load_err(line, format!("invalid {field}: {message}"));
        let subject_id = row[2].to_string();
        if subject_id.is_empty() {
            return Err(field_err("subject_id", "empty".into()));
        }
        let pmi_hours: f64 = row[3]
            .parse()
            .map_err(|_| field_err("pmi_hours", format!("{:?} is not a number", &row[3])))?;
        if !(pmi_hours >= 0.0) || !pmi_hours.is_finite() {
            return Err(field_err("pmi_hours", format!("{pmi_hours} must be a finite value >= 0")));
        }
        let spectrum: Spectrum = row[4].parse().map_err(|e| field_err("spectrum", e))?;
        let record = ManifestRecord {
            image_path: PathBuf::from(&row[0]),
            mask_path: PathBuf::from(&row[1]),
            subject_id,
            pmi_hours,
            spectrum,
        };
        if !seen.insert(record.image_path.clone()) {
            return Err(field_err("image_path", format!("duplicate {}", record.image_path.display())));
        }
        for p in [&record.image_path, &record.mask_path] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(load_err(line, format!("missing file {}", full.display())));
            }
        }
        manifest.records.push(record);
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.image_path.to_string_lossy().as_ref(),
            r.mask_path.to_string_lossy().as_ref(),
            r.subject_id.as_str(),
            &r.pmi_hours.to_string(),
            &r.spectrum.to_string(),
        ])
        .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a record's image to 8-bit grayscale (red channel for
/// [`Spectrum::Red`] records) and its ground-truth mask.
pub fn load_sample(manifest: &Manifest, record: &ManifestRecord) -> Result<(Sample, Mask)> {
    let image_path = manifest.resolve(&record.image_path);
    let img = image::open(&image_path).map_err(|source| Error::Image {
        path: image_path.clone(),
        source,
    })?;
    let image = match record.spectrum {
        Spectrum::Red if img.color().has_color() => {
            let rgb = img.to_rgb8();
            image::GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| image::Luma([rgb.get_pixel(x, y)[0]]))
        }
        _ => img.to_luma8(),
    };
    let mask = Mask::load(&manifest.resolve(&record.mask_path))?;
    if (mask.width() as u32, mask.height() as u32) != image.dimensions() {
        return Err(Error::shape(format!(
            "{}: mask {}x{} does not match image {}x{}",
            image_path.display(),
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    Ok((
        Sample {
            image,
            subject_id: record.subject_id.clone(),
            pmi_hours: record.pmi_hours,
            spectrum: record.spectrum,
            source_path: image_path,
        },
        mask,
    ))
}
