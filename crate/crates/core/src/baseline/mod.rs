//! Conventional iris segmenter used as the comparison anchor.
//!
//! Pipeline: pupil circle, limbus circle (both by integro-differential
//! search), a Viterbi pass around each circle that lets the boundary
//! deviate from a perfect circle, the annulus between the two contours, and
//! finally removal of specular highlights.

mod circle;
mod plane;
mod viterbi;

use image::GrayImage;
use serde::{Deserialize, Serialize};

pub use circle::{find_iris_circle, find_pupil_circle};
pub use viterbi::{path_value, solve_exact, solve_two_pass, total_variation, ClosedPath, Closure, EdgeLattice};

use crate::error::{Error, Result};
use crate::mask::Mask;
use circle::Prepared;
use plane::{percentile_u8, Plane};

/// Pixels darker than this never count as reflections, whatever the
/// percentile says (half of the 8-bit range).
pub const REFLECTION_FLOOR: u8 = 128;

/// Circle in continuous image coordinates (pixel `(x, y)` has its centre at
/// `(x+0.5, y+0.5)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite() && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::config(format!("invalid circle {self:?}")));
        }
        Ok(())
    }

    pub fn center_distance(&self, other: &Circle) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

/// One radius per uniformly spaced angle around a fixed centre; angle `a`
/// of `n` is `2πa/n`, measured from +x towards +y (image down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarContour {
    pub cx: f64,
    pub cy: f64,
    pub radii: Vec<f64>,
    /// Radial search band `[lo, hi]` the radii were chosen from.
    pub band: [f64; 2],
    pub closure: Closure,
}

impl PolarContour {
    /// Radius at angle `theta`, linearly interpolated between lattice angles.
    pub fn radius_at(&self, theta: f64) -> f64 {
        let n = self.radii.len();
        let t = (theta / std::f64::consts::TAU).rem_euclid(1.0) * n as f64;
        let i = (t.floor() as usize).min(n - 1);
        let frac = t - i as f64;
        self.radii[i] * (1.0 - frac) + self.radii[(i + 1) % n] * frac
    }

    /// Whether continuous point `(x, y)` lies inside the contour.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx.hypot(dy) <= self.radius_at(dy.atan2(dx))
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Pupil radius search band in pixels.
    pub pupil_radius: [f64; 2],
    /// Limbus radius band as multiples of the pupil radius.
    pub iris_ratio: [f64; 2],
    /// Maximum distance (px) between the pupil and limbus centres.
    pub iris_center_tolerance: f64,
    pub n_angles: usize,
    pub n_radii: usize,
    /// Contour search band is `r·(1 ± band_fraction)` around each circle.
    pub band_fraction: f64,
    /// Penalty per lattice step of radial jump between neighbouring angles.
    pub smoothness: f64,
    /// Optional hard cap on the jump between neighbouring angles.
    pub max_jump: Option<usize>,
    /// Lattices with more radii than this use the two-pass closure.
    pub exact_closure_limit: usize,
    pub reflection_percentile: f64,
    /// Radial Gaussian blur (px) applied to the circle integral derivative.
    pub blur_sigma: f64,
    /// Smallest accepted objective peak, as a fraction of the image's
    /// dynamic range per pixel.
    pub min_contrast: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            pupil_radius: [8.0, 90.0],
            iris_ratio: [1.5, 4.0],
            iris_center_tolerance: 10.0,
            n_angles: 128,
            n_radii: 64,
            band_fraction: 0.2,
            smoothness: 2.0,
            max_jump: None,
            exact_closure_limit: 32,
            reflection_percentile: 99.0,
            blur_sigma: 1.0,
            min_contrast: 0.02,
        }
    }
}

impl BaselineConfig {
    /// Same settings for images `factor` times the linear size.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.pupil_radius = [self.pupil_radius[0] * factor, self.pupil_radius[1] * factor];
        self.iris_center_tolerance *= factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Validation {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        let band_ok = |b: [f64; 2]| b[0] > 0.0 && b[0] < b[1] && b[1].is_finite();
        if !band_ok(self.pupil_radius) {
            return bad("pupil_radius", "band must satisfy 0 < lo < hi");
        }
        if !band_ok(self.iris_ratio) {
            return bad("iris_ratio", "band must satisfy 0 < lo < hi");
        }
        if !(self.iris_center_tolerance >= 0.0) {
            return bad("iris_center_tolerance", "must be >= 0");
        }
        if self.n_angles < 8 {
            return bad("n_angles", "must be at least 8");
        }
        if self.n_radii < 2 {
            return bad("n_radii", "must be at least 2");
        }
        if !(self.band_fraction > 0.0 && self.band_fraction < 1.0) {
            return bad("band_fraction", "must be in (0, 1)");
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return bad("smoothness", "must be finite and >= 0");
        }
        if !(self.reflection_percentile > 0.0 && self.reflection_percentile <= 100.0) {
            return bad("reflection_percentile", "must be in (0, 100]");
        }
        if !(self.blur_sigma >= 0.0 && self.min_contrast >= 0.0) {
            return bad("blur_sigma", "blur_sigma and min_contrast must be >= 0");
        }
        Ok(())
    }
}

/// Radial gradient magnitude on the polar lattice around `circle`, then the
/// best closed contour through it.
fn refine_on(plane: &Plane, circle: &Circle, cfg: &BaselineConfig) -> Result<PolarContour> {
    let lo = circle.r * (1.0 - cfg.band_fraction);
    let hi = circle.r * (1.0 + cfg.band_fraction);
    if cfg.n_radii <= 1 || !(hi - lo > 0.0) {
        return Err(Error::config(format!(
            "degenerate contour band [{lo}, {hi}] with {} radii",
            cfg.n_radii
        )));
    }
    let step = (hi - lo) / (cfg.n_radii - 1) as f64;
    let h = 0.5;
    let mut scores = Vec::with_capacity(cfg.n_angles * cfg.n_radii);
    for a in 0..cfg.n_angles {
        let t = std::f64::consts::TAU * a as f64 / cfg.n_angles as f64;
        let (c, s) = (t.cos(), t.sin());
        for j in 0..cfg.n_radii {
            let r = lo + j as f64 * step;
            let outer = plane.sample(circle.cx + (r + h) * c, circle.cy + (r + h) * s);
            let inner = plane.sample(circle.cx + (r - h) * c, circle.cy + (r - h) * s);
            scores.push((outer - inner).abs() / (2.0 * h));
        }
    }
    let lattice = EdgeLattice::new(cfg.n_angles, cfg.n_radii, scores);
    let (path, closure) = if cfg.n_radii <= cfg.exact_closure_limit {
        (solve_exact(&lattice, cfg.smoothness, cfg.max_jump), Closure::Exact)
    } else {
        (solve_two_pass(&lattice, cfg.smoothness, cfg.max_jump), Closure::TwoPass)
    };
    let path = path.ok_or_else(|| Error::config("no contour satisfies max_jump"))?;
    Ok(PolarContour {
        cx: circle.cx,
        cy: circle.cy,
        radii: path.radii.iter().map(|&j| lo + j as f64 * step).collect(),
        band: [lo, hi],
        closure,
    })
}

/// Contour around `circle` that follows the strongest radial edges within
/// `r·(1 ± band_fraction)`, trading edge strength against jumps.
pub fn viterbi_refine(image: &GrayImage, circle: &Circle, cfg: &BaselineConfig) -> Result<PolarContour> {
    cfg.validate()?;
    circle.validate()?;
    refine_on(&Prepared::new(image, cfg).full, circle, cfg)
}

/// Removes pixels at or above the configured intensity percentile of the
/// masked pixels (never below [`REFLECTION_FLOOR`]) plus a one-pixel ring
/// around them.
pub fn exclude_reflections(image: &GrayImage, mask: &Mask, cfg: &BaselineConfig) -> Result<Mask> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if mask.dims() != (h, w) {
        return Err(Error::shape(format!(
            "mask {}x{} vs image {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    let px = image.as_raw();
    let inside = px.iter().zip(mask.bits()).filter(|(_, &m)| m).map(|(&v, _)| v);
    let Some(cut) = percentile_u8(inside, cfg.reflection_percentile) else {
        return Ok(mask.clone());
    };
    let cut = cut.max(REFLECTION_FLOOR);
    let hot: Vec<bool> = px.iter().zip(mask.bits()).map(|(&v, &m)| m && v >= cut).collect();
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if !hot[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    out.set(xx, yy, false);
                }
            }
        }
    }
    Ok(out)
}

/// Everything the pipeline found on one image.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: Mask,
    pub pupil: Circle,
    pub limbus: Circle,
    pub pupil_contour: PolarContour,
    pub limbus_contour: PolarContour,
}

pub fn segment_detailed(image: &GrayImage, cfg: &BaselineConfig) -> Result<Segmentation> {
    cfg.validate()?;
    let prep = Prepared::new(image, cfg);
    let pupil = circle::pupil_on(&prep, cfg)?;
    let limbus = circle::iris_on(&prep, &pupil, cfg)?;
    let pupil_contour = refine_on(&prep.full, &pupil, cfg)?;
    let limbus_contour = refine_on(&prep.full, &limbus, cfg)?;
    let (w, h) = (prep.full.w, prep.full.h);
    let reach = limbus_contour.max_radius();
    let x0 = (limbus.cx - reach).floor().max(0.0) as usize;
    let y0 = (limbus.cy - reach).floor().max(0.0) as usize;
    let x1 = ((limbus.cx + reach).ceil().max(0.0) as usize).min(w);
    let y1 = ((limbus.cy + reach).ceil().max(0.0) as usize).min(h);
    let mut annulus = Mask::new(w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if limbus_contour.contains(px, py) && !pupil_contour.contains(px, py) {
                annulus.set(x, y, true);
            }
        }
    }
    let mask = exclude_reflections(image, &annulus, cfg)?;
    Ok(Segmentation {
        mask,
        pupil,
        limbus,
        pupil_contour,
        limbus_contour,
    })
}

/// Iris mask at the image's own resolution.
pub fn segment(image: &GrayImage, cfg: &BaselineConfig) -> Result<Mask> {
    segment_detailed(image, cfg).map(|s| s.mask)
}
