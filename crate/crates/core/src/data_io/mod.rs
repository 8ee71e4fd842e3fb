//! Dataset ingestion, resampling, synthetic eyes and overlay rendering.

mod manifest;
mod overlay;
mod resample;
mod synth;

use std::path::PathBuf;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, load_sample, write_manifest, Manifest, ManifestRecord};
pub use overlay::{render_overlay, OverlayCounts, Tint};
pub use resample::{downsample_image, downsample_mask, integer_factors, upscale_mask, upscale_mask_to};
pub use synth::{
    generate_synthetic, render_sample, write_synthetic, Occluder, PupilEllipse, SynthConfig,
    SynthGeometry, SynthSample, Wrinkle,
};

pub use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spectrum {
    /// Near-infrared capture.
    #[serde(rename = "NIR")]
    Nir,
    /// Red channel of a visible-light capture.
    #[serde(rename = "RED")]
    Red,
}

impl std::str::FromStr for Spectrum {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "NIR" => Ok(Spectrum::Nir),
            "RED" => Ok(Spectrum::Red),
            other => Err(format!("expected NIR or RED, got {other:?}")),
        }
    }
}

impl std::fmt::Display for Spectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Spectrum::Nir => "NIR",
            Spectrum::Red => "RED",
        })
    }
}

/// One eye image with its acquisition metadata.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: GrayImage,
    pub subject_id: String,
    /// Hours post-mortem.
    pub pmi_hours: f64,
    pub spectrum: Spectrum,
    pub source_path: PathBuf,
}

impl Sample {
    /// Identifier used to name per-image outputs: the image file stem.
    pub fn id(&self) -> String {
        sample_id(&self.source_path)
    }
}

pub fn sample_id(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}
