//! Integro-differential circle search: the Gaussian-smoothed radial
//! derivative of the mean intensity along a circle, maximized over centre
//! and radius on a coarse pyramid level and then refined at full
//! resolution.

use image::GrayImage;
use rayon::prelude::*;

use super::plane::{percentile_u8, Plane};
use super::{BaselineConfig, Circle};
use crate::error::{Error, Result};

/// 8-bit level at or above which a pixel may be treated as a specular highlight.
pub(crate) const SPECULAR_LEVEL: u8 = 230;
/// Pyramid levels aim for roughly this many pixels along the short side.
const COARSE_SIDE: usize = 80;

/// Inpainted image plus the quantities every search stage shares.
pub(crate) struct Prepared {
    pub full: Plane,
    coarse: Plane,
    factor: usize,
    lo: f64,
    range: f64,
}

impl Prepared {
    pub fn new(image: &GrayImage, cfg: &BaselineConfig) -> Self {
        let mut full = Plane::from_gray(image);
        let factor = (full.w.min(full.h) / COARSE_SIDE).max(1);
        let cut = percentile_u8(image.as_raw().iter().copied(), cfg.reflection_percentile)
            .unwrap_or(u8::MAX)
            .max(SPECULAR_LEVEL);
        let flagged: Vec<bool> = image.as_raw().iter().map(|&v| v >= cut).collect();
        if flagged.iter().any(|&f| f) {
            full.inpaint(&flagged, (3 * factor).max(3));
        }
        let kept = image.as_raw().iter().zip(&flagged).filter(|(_, &f)| !f).map(|(&v, _)| v);
        let lo = percentile_u8(kept.clone(), 1.0).unwrap_or(0) as f64;
        let hi = percentile_u8(kept, 99.0).unwrap_or(0) as f64;
        let coarse = full.downsample(factor);
        Self {
            full,
            coarse,
            factor,
            lo,
            range: hi - lo,
        }
    }
}

fn unit_circle(n: usize, lateral_only: bool) -> Vec<(f64, f64)> {
    let limit = (60f64).to_radians().sin();
    (0..n)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            (t.cos(), t.sin())
        })
        .filter(|&(_, s)| !lateral_only || s.abs() <= limit + 1e-12)
        .collect()
}

fn gaussian(sigma_steps: f64) -> Vec<f64> {
    if sigma_steps <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma_steps).ceil() as i64;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma_steps).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy)]
struct Best {
    cx: f64,
    cy: f64,
    r: f64,
    score: f64,
    at_edge: bool,
}

/// One search stage: a plane, a set of sampling angles, a radius step and a
/// smoothing kernel.
struct Probe<'a> {
    plane: &'a Plane,
    trig: Vec<(f64, f64)>,
    dr: f64,
    kernel: Vec<f64>,
    /// Penalize candidates whose interior (sampled at half the radius) is bright.
    dark_inside: bool,
    lo: f64,
    range: f64,
}

impl Probe<'_> {
    fn ring_mean(&self, cx: f64, cy: f64, r: f64) -> f64 {
        let s: f64 = self.trig.iter().map(|&(c, s)| self.plane.sample(cx + r * c, cy + r * s)).sum();
        s / self.trig.len() as f64
    }

    fn peak(&self, cx: f64, cy: f64, lo: f64, hi: f64) -> Option<Best> {
        if hi < lo {
            return None;
        }
        let n = ((hi - lo) / self.dr + 1e-9).floor() as usize + 1;
        let half = self.kernel.len() / 2;
        let pad = half + 1;
        let profile: Vec<f64> = (0..n + 2 * pad)
            .map(|k| {
                let r = lo + (k as f64 - pad as f64) * self.dr;
                self.ring_mean(cx, cy, r.max(0.25))
            })
            .collect();
        let deriv = |k: usize| (profile[k + 1] - profile[k - 1]) / (2.0 * self.dr);
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                let k = j + pad;
                let s: f64 = self.kernel.iter().enumerate().map(|(t, w)| w * deriv(k + t - half)).sum();
                let mut s = s / self.range;
                if self.dark_inside && s > 0.0 {
                    let r = lo + j as f64 * self.dr;
                    let inner = (self.ring_mean(cx, cy, 0.5 * r) - self.lo) / self.range;
                    s *= (1.0 - inner).clamp(0.0, 1.0);
                }
                s
            })
            .collect();
        let mut j = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[j] {
                j = i;
            }
        }
        let mut r = lo + j as f64 * self.dr;
        if j > 0 && j + 1 < n {
            let (a, b, c) = (scores[j - 1], scores[j], scores[j + 1]);
            let den = a - 2.0 * b + c;
            if den < 0.0 {
                r += (0.5 * (a - c) / den).clamp(-0.5, 0.5) * self.dr;
            }
        }
        Some(Best {
            cx,
            cy,
            r,
            score: scores[j],
            at_edge: n > 1 && (j == 0 || j + 1 == n),
        })
    }

    /// Best candidate over `centers`; ties keep the earliest centre.
    fn search(&self, centers: &[(f64, f64)], lo: f64, hi: f64) -> Option<Best> {
        let found: Vec<Option<Best>> = centers.par_iter().map(|&(x, y)| self.peak(x, y, lo, hi)).collect();
        found.into_iter().flatten().fold(None, |acc: Option<Best>, b| match acc {
            Some(a) if a.score >= b.score => Some(a),
            _ => Some(b),
        })
    }
}

fn grid(cx: f64, cy: f64, half: f64, step: f64, within: Option<(f64, f64, f64)>) -> Vec<(f64, f64)> {
    let n = (half / step).round() as i64;
    let mut out = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            let (x, y) = (cx + i as f64 * step, cy + j as f64 * step);
            if let Some((ox, oy, tol)) = within {
                if (x - ox).hypot(y - oy) > tol + 1e-9 {
                    continue;
                }
            }
            out.push((x, y));
        }
    }
    out
}

struct Stages {
    name: &'static str,
    band: [f64; 2],
    lateral_only: bool,
    dark_inside: bool,
    /// Centre constraint `(x, y, tolerance)` in full-resolution pixels.
    within: Option<(f64, f64, f64)>,
}

fn run_stages(p: &Prepared, cfg: &BaselineConfig, st: &Stages) -> Result<Circle> {
    let f = p.factor as f64;
    let [lo, hi] = st.band;
    if p.range < 1e-9 {
        return Err(Error::NoBoundaryFound {
            boundary: st.name,
            peak: 0.0,
            floor: cfg.min_contrast,
        });
    }
    let probe = |plane, n_angles, dr: f64| Probe {
        plane,
        trig: unit_circle(n_angles, st.lateral_only),
        dr,
        kernel: gaussian(cfg.blur_sigma / dr),
        dark_inside: st.dark_inside,
        lo: p.lo,
        range: p.range,
    };

    // coarse level: every other pixel centre, then a unit-step pass around the winner
    let coarse = probe(&p.coarse, 32, 0.5);
    let (cw, ch) = (p.coarse.w as f64, p.coarse.h as f64);
    let centers: Vec<(f64, f64)> = match st.within {
        None => grid(cw / 2.0, ch / 2.0, (cw.max(ch) / 2.0).ceil(), 2.0, None)
            .into_iter()
            .filter(|&(x, y)| x > 0.0 && y > 0.0 && x < cw && y < ch)
            .collect(),
        Some((x, y, tol)) => grid(x / f, y / f, (tol / f).ceil(), 1.0, Some((x / f, y / f, tol / f))),
    };
    let mut b = coarse
        .search(&centers, lo / f, hi / f)
        .ok_or_else(|| Error::config(format!("{} radius band is empty", st.name)))?;
    if st.within.is_none() {
        let local = grid(b.cx, b.cy, 2.0, 1.0, None);
        b = coarse.search(&local, lo / f, hi / f).unwrap_or(b);
    }
    if b.at_edge && b.score >= cfg.min_contrast {
        return Err(Error::OutOfBand {
            boundary: st.name,
            radius: b.r * f,
            lo,
            hi,
        });
    }

    // full resolution: unit steps around the coarse answer, then half steps
    let mut best = Best {
        cx: b.cx * f,
        cy: b.cy * f,
        r: b.r * f,
        ..b
    };
    for (half, step, dr, span) in [(f, 1.0, 0.5, 2.0 * f), (1.0, 0.5, 0.25, 2.0)] {
        let fine = probe(&p.full, 256, dr);
        let centers = grid(best.cx, best.cy, half, step, st.within);
        let (rl, rh) = ((best.r - span).max(lo), (best.r + span).min(hi));
        if let Some(nb) = fine.search(&centers, rl, rh) {
            best = nb;
        }
    }
    if !(best.score >= cfg.min_contrast) {
        return Err(Error::NoBoundaryFound {
            boundary: st.name,
            peak: best.score,
            floor: cfg.min_contrast,
        });
    }
    if best.r - lo < 0.5 || hi - best.r < 0.5 {
        return Err(Error::OutOfBand {
            boundary: st.name,
            radius: best.r,
            lo,
            hi,
        });
    }
    Ok(Circle {
        cx: best.cx,
        cy: best.cy,
        r: best.r,
    })
}

pub(crate) fn pupil_on(p: &Prepared, cfg: &BaselineConfig) -> Result<Circle> {
    run_stages(
        p,
        cfg,
        &Stages {
            name: "pupil",
            band: cfg.pupil_radius,
            lateral_only: false,
            dark_inside: true,
            within: None,
        },
    )
}

pub(crate) fn iris_on(p: &Prepared, pupil: &Circle, cfg: &BaselineConfig) -> Result<Circle> {
    run_stages(
        p,
        cfg,
        &Stages {
            name: "limbus",
            band: [cfg.iris_ratio[0] * pupil.r, cfg.iris_ratio[1] * pupil.r],
            lateral_only: true,
            dark_inside: false,
            within: Some((pupil.cx, pupil.cy, cfg.iris_center_tolerance)),
        },
    )
}

/// Pupil circle: dark interior, brighter outside, radius within the
/// configured pupil band. Specular highlights are median-inpainted first.
pub fn find_pupil_circle(image: &GrayImage, cfg: &BaselineConfig) -> Result<Circle> {
    cfg.validate()?;
    pupil_on(&Prepared::new(image, cfg), cfg)
}

/// Limbus circle: centre within the configured tolerance of the pupil
/// centre, radius within the iris band relative to the pupil radius. Only
/// the lateral arcs (within 60° of horizontal) are integrated, which keeps
/// eyelids and retractors out of the line integral.
pub fn find_iris_circle(image: &GrayImage, pupil: &Circle, cfg: &BaselineConfig) -> Result<Circle> {
    cfg.validate()?;
    pupil.validate()?;
    iris_on(&Prepared::new(image, cfg), pupil, cfg)
}
