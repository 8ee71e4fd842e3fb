//! Seeded synthetic eye images with exact ground truth.
//!
//! Each image is a stylized ocular scene: sclera, a textured iris disc, a
//! dark (optionally elliptical) pupil, and the post-mortem style nuisances
//! that the ground truth must exclude or ignore: sinusoidal corneal wrinkle
//! bands, bright specular blobs, retractor-shaped occluders entering from
//! the image border, and additive Gaussian noise. The ground-truth mask is
//! the iris annulus minus blobs and occluders. Pixel `(x, y)` is sampled at
//! its centre `(x + 0.5, y + 0.5)`.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::{write_manifest, ManifestRecord, Sample, Spectrum};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng::Stream;

const PUPIL_LEVEL: f64 = 22.0;
const SCLERA_LEVEL: f64 = 178.0;
const BLOB_LEVEL: f64 = 252.0;
const RETRACTOR_LEVEL: f64 = 212.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Pupil radius range (semi-major axis when elliptical), pixels.
    pub pupil_radius: [f64; 2],
    pub limbus_radius: [f64; 2],
    /// Maximum displacement of the limbus centre from the image centre.
    pub center_jitter: f64,
    /// Maximum offset of the pupil centre from the limbus centre.
    pub pupil_offset: f64,
    /// Minor/major axis ratio range of the pupil; 1 is a circle.
    pub ellipticity: [f64; 2],
    pub wrinkles: [usize; 2],
    pub wrinkle_amplitude: f64,
    pub wrinkle_wavelength: [f64; 2],
    pub blobs: [usize; 2],
    pub blob_radius: [f64; 2],
    pub retractor_probability: f64,
    /// Standard deviation of additive noise, gray levels.
    pub noise_sigma: f64,
    pub n_subjects: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            pupil_radius: [32.0, 48.0],
            limbus_radius: [95.0, 125.0],
            center_jitter: 20.0,
            pupil_offset: 3.0,
            ellipticity: [0.85, 1.0],
            wrinkles: [0, 2],
            wrinkle_amplitude: 18.0,
            wrinkle_wavelength: [8.0, 16.0],
            blobs: [1, 3],
            blob_radius: [3.0, 7.0],
            retractor_probability: 0.3,
            noise_sigma: 4.0,
            n_subjects: 17,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Geometry only: circular concentric pupil, no nuisances, no noise.
    pub fn clean() -> Self {
        Self {
            pupil_offset: 0.0,
            ellipticity: [1.0, 1.0],
            wrinkles: [0, 0],
            blobs: [0, 0],
            retractor_probability: 0.0,
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    /// Strong post-mortem style deformations.
    pub fn heavy() -> Self {
        Self {
            pupil_offset: 5.0,
            ellipticity: [0.7, 0.85],
            wrinkles: [3, 5],
            wrinkle_amplitude: 35.0,
            blobs: [4, 7],
            blob_radius: [4.0, 9.0],
            retractor_probability: 1.0,
            noise_sigma: 6.0,
            ..Self::default()
        }
    }

    /// Scales every length (image size, radii, wavelengths) by `factor`.
    pub fn rescaled(mut self, factor: f64) -> Self {
        let s = |r: [f64; 2]| [r[0] * factor, r[1] * factor];
        self.width = (self.width as f64 * factor).round() as usize;
        self.height = (self.height as f64 * factor).round() as usize;
        self.pupil_radius = s(self.pupil_radius);
        self.limbus_radius = s(self.limbus_radius);
        self.center_jitter *= factor;
        self.pupil_offset *= factor;
        self.wrinkle_wavelength = s(self.wrinkle_wavelength);
        self.blob_radius = s(self.blob_radius);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero".into());
        }
        for (name, r) in [
            ("pupil_radius", self.pupil_radius),
            ("limbus_radius", self.limbus_radius),
            ("ellipticity", self.ellipticity),
            ("wrinkle_wavelength", self.wrinkle_wavelength),
            ("blob_radius", self.blob_radius),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return bad(format!("{name} range {r:?} must satisfy 0 < lo <= hi"));
            }
        }
        if self.wrinkles[0] > self.wrinkles[1] || self.blobs[0] > self.blobs[1] {
            return bad("count ranges must satisfy lo <= hi".into());
        }
        if self.ellipticity[1] > 1.0 {
            return bad("ellipticity must not exceed 1".into());
        }
        if self.pupil_radius[1] + self.pupil_offset >= self.limbus_radius[0] {
            return bad(format!(
                "pupil (up to {} px plus offset {}) must fit inside the limbus (from {} px)",
                self.pupil_radius[1], self.pupil_offset, self.limbus_radius[0]
            ));
        }
        if self.center_jitter < 0.0 || 2.0 * self.center_jitter >= self.width.min(self.height) as f64 {
            return bad("center_jitter must keep the eye centre inside the image".into());
        }
        if !(0.0..=1.0).contains(&self.retractor_probability) || self.noise_sigma < 0.0 {
            return bad("retractor_probability must be in [0,1] and noise_sigma >= 0".into());
        }
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PupilEllipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Orientation of the major axis, radians.
    pub angle: f64,
}

impl PupilEllipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) < 1.0
    }
}

/// Sinusoidal band across the cornea.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wrinkle {
    pub x0: f64,
    pub y0: f64,
    pub angle: f64,
    pub half_width: f64,
    pub wavelength: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Wrinkle {
    fn offset(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let d = -(x - self.x0) * s + (y - self.y0) * c;
        if d.abs() >= self.half_width {
            return 0.0;
        }
        let taper = (PI * d / (2.0 * self.half_width)).cos().powi(2);
        self.amplitude * taper * (2.0 * PI * d / self.wavelength + self.phase).sin()
    }
}

/// Retractor blade entering from the top or bottom border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub from_top: bool,
    /// Vertical position of the blade tip.
    pub tip_y: f64,
    pub tip_x: f64,
    /// Edge bends away from the tip by `curvature · dx² / scale`.
    pub curvature: f64,
    pub scale: f64,
}

impl Occluder {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let bend = self.curvature * (x - self.tip_x).powi(2) / self.scale;
        if self.from_top {
            y < self.tip_y - bend
        } else {
            y > self.tip_y + bend
        }
    }
}

/// Exact shape parameters of one rendered eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub id: String,
    pub limbus_cx: f64,
    pub limbus_cy: f64,
    pub limbus_r: f64,
    pub pupil: PupilEllipse,
    /// Specular blobs as `[x, y, r]`.
    pub blobs: Vec<[f64; 3]>,
    pub occluders: Vec<Occluder>,
    pub wrinkles: Vec<Wrinkle>,
    pub iris_level: f64,
}

impl SynthGeometry {
    pub fn in_limbus(&self, x: f64, y: f64) -> bool {
        (x - self.limbus_cx).powi(2) + (y - self.limbus_cy).powi(2) < self.limbus_r.powi(2)
    }

    pub fn in_blob(&self, x: f64, y: f64) -> bool {
        self.blobs
            .iter()
            .any(|b| (x - b[0]).powi(2) + (y - b[1]).powi(2) < b[2] * b[2])
    }

    pub fn occluded(&self, x: f64, y: f64) -> bool {
        self.occluders.iter().any(|o| o.contains(x, y))
    }

    /// Ground-truth membership of the point `(x, y)`.
    pub fn is_iris(&self, x: f64, y: f64) -> bool {
        self.in_limbus(x, y) && !self.pupil.contains(x, y) && !self.in_blob(x, y) && !self.occluded(x, y)
    }

    pub fn truth_mask(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |x, y| self.is_iris(x as f64 + 0.5, y as f64 + 0.5))
    }
}

pub struct SynthSample {
    pub sample: Sample,
    pub mask: Mask,
    pub geometry: SynthGeometry,
}

fn draw_geometry(cfg: &SynthConfig, rng: &mut Stream, id: String) -> SynthGeometry {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let jitter = |rng: &mut Stream| rng.range(-cfg.center_jitter, cfg.center_jitter);
    let limbus_cx = w / 2.0 + jitter(rng);
    let limbus_cy = h / 2.0 + jitter(rng);
    let limbus_r = rng.range(cfg.limbus_radius[0], cfg.limbus_radius[1]);
    let pr = rng.range(cfg.pupil_radius[0], cfg.pupil_radius[1]);
    let (off_a, off_r) = (rng.range(0.0, 2.0 * PI), rng.range(0.0, cfg.pupil_offset));
    let pupil = PupilEllipse {
        cx: limbus_cx + off_r * off_a.cos(),
        cy: limbus_cy + off_r * off_a.sin(),
        semi_major: pr,
        semi_minor: pr * rng.range(cfg.ellipticity[0], cfg.ellipticity[1]),
        angle: rng.range(0.0, PI),
    };

    let n_blobs = rng.range_inclusive(cfg.blobs[0], cfg.blobs[1]);
    let blobs = (0..n_blobs)
        .map(|_| {
            let br = rng.range(cfg.blob_radius[0], cfg.blob_radius[1]);
            let a = rng.range(0.0, 2.0 * PI);
            let d = rng.range(pr * 1.1, limbus_r * 0.95);
            [pupil.cx + d * a.cos(), pupil.cy + d * a.sin(), br]
        })
        .collect();

    let mut occluders = Vec::new();
    if rng.unit() < cfg.retractor_probability {
        occluders.push(Occluder {
            from_top: true,
            tip_y: limbus_cy - limbus_r * rng.range(0.65, 0.9),
            tip_x: limbus_cx + rng.range(-0.3, 0.3) * limbus_r,
            curvature: rng.range(0.4, 0.9),
            scale: limbus_r,
        });
        if rng.unit() < 0.5 {
            occluders.push(Occluder {
                from_top: false,
                tip_y: limbus_cy + limbus_r * rng.range(0.7, 0.95),
                tip_x: limbus_cx + rng.range(-0.3, 0.3) * limbus_r,
                curvature: rng.range(0.4, 0.9),
                scale: limbus_r,
            });
        }
    }

    let n_wrinkles = rng.range_inclusive(cfg.wrinkles[0], cfg.wrinkles[1]);
    let wrinkles = (0..n_wrinkles)
        .map(|_| {
            let a = rng.range(0.0, 2.0 * PI);
            let d = rng.range(0.0, limbus_r);
            Wrinkle {
                x0: limbus_cx + d * a.cos(),
                y0: limbus_cy + d * a.sin(),
                angle: rng.range(0.0, PI),
                half_width: limbus_r * rng.range(0.15, 0.4),
                wavelength: rng.range(cfg.wrinkle_wavelength[0], cfg.wrinkle_wavelength[1]),
                amplitude: cfg.wrinkle_amplitude * rng.range(0.6, 1.0),
                phase: rng.range(0.0, 2.0 * PI),
            }
        })
        .collect();

    SynthGeometry {
        id,
        limbus_cx,
        limbus_cy,
        limbus_r,
        pupil,
        blobs,
        occluders,
        wrinkles,
        iris_level: rng.range(95.0, 115.0),
    }
}

/// Renders the grayscale image for `geom` using `rng` for texture phase and noise.
pub fn render_sample(cfg: &SynthConfig, geom: &SynthGeometry, rng: &mut Stream) -> GrayImage {
    let (tex_k, tex_phase) = (rng.range_inclusive(12, 24) as f64, rng.range(0.0, 2.0 * PI));
    let mut img = GrayImage::new(cfg.width as u32, cfg.height as u32);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = if geom.occluded(px, py) {
                RETRACTOR_LEVEL - 15.0 * (py / cfg.height as f64)
            } else if geom.in_blob(px, py) {
                BLOB_LEVEL
            } else if geom.pupil.contains(px, py) {
                PUPIL_LEVEL
            } else if geom.in_limbus(px, py) {
                let (dx, dy) = (px - geom.limbus_cx, py - geom.limbus_cy);
                let r = (dx * dx + dy * dy).sqrt() / geom.limbus_r;
                let theta = dy.atan2(dx);
                geom.iris_level + 9.0 * (tex_k * theta + tex_phase + 3.0 * r).sin() - 6.0 * r
            } else {
                SCLERA_LEVEL + 12.0 * (py / cfg.height as f64 - 0.5)
            };
            if !geom.occluded(px, py) && !geom.in_blob(px, py) {
                v += geom.wrinkles.iter().map(|w| w.offset(px, py)).sum::<f64>();
            }
            v += rng.normal(0.0, cfg.noise_sigma);
            img.put_pixel(x as u32, y as u32, Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
    img
}

/// Produces `n` samples; sample `i` depends only on `(cfg, i)`.
pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = Stream::fork(cfg.seed, i as u64 + 1);
            let id = format!("synth_{i:04}");
            let geometry = draw_geometry(cfg, &mut rng, id.clone());
            let image = render_sample(cfg, &geometry, &mut rng);
            let mask = geometry.truth_mask(cfg.width, cfg.height);
            let pmi_hours = (rng.range(5.0, 600.0) * 10.0).round() / 10.0;
            SynthSample {
                sample: Sample {
                    image,
                    subject_id: format!("S{:02}", i % cfg.n_subjects),
                    pmi_hours,
                    spectrum: Spectrum::Nir,
                    source_path: format!("images/{id}.png").into(),
                },
                mask,
                geometry,
            }
        })
        .collect())
}

/// Writes `images/`, `masks/`, `manifest.csv` and `geometry.json` under `dir`.
pub fn write_synthetic(dir: &Path, samples: &[SynthSample]) -> Result<()> {
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let id = &s.geometry.id;
        let image_rel = format!("images/{id}.png");
        let mask_rel = format!("masks/{id}.png");
        let p = dir.join(&image_rel);
        s.sample.image.save(&p).map_err(|source| Error::Image { path: p, source })?;
        s.mask.save(&dir.join(&mask_rel))?;
        records.push(ManifestRecord {
            image_path: image_rel.into(),
            mask_path: mask_rel.into(),
            subject_id: s.sample.subject_id.clone(),
            pmi_hours: s.sample.pmi_hours,
            spectrum: s.sample.spectrum,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &records)?;
    let geoms: Vec<&SynthGeometry> = samples.iter().map(|s| &s.geometry).collect();
    let p = dir.join("geometry.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&geoms)?).map_err(|e| Error::io(p, e))
}
