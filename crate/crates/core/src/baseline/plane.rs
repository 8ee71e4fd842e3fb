//! Floating-point image plane with continuous coordinates: pixel `(x, y)`
//! covers `[x, x+1) × [y, y+1)`, so its centre sits at `(x+0.5, y+0.5)`.

use image::GrayImage;

#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn from_gray(image: &GrayImage) -> Self {
        Self {
            w: image.width() as usize,
            h: image.height() as usize,
            data: image.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample at continuous `(x, y)`, clamped to the border.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.w - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (fx as usize, fy as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let top = self.at(x0, y0) as f64 * (1.0 - tx) + self.at(x1, y0) as f64 * tx;
        let bot = self.at(x0, y1) as f64 * (1.0 - tx) + self.at(x1, y1) as f64 * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Block mean over `f×f` tiles; a ragged right/bottom margin is dropped.
    pub fn downsample(&self, f: usize) -> Self {
        if f <= 1 {
            return self.clone();
        }
        let (w, h) = (self.w / f, self.h / f);
        let mut data = Vec::with_capacity(w * h);
        let norm = 1.0 / (f * f) as f32;
        for by in 0..h {
            for bx in 0..w {
                let mut s = 0.0f32;
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        s += self.at(x, y);
                    }
                }
                data.push(s * norm);
            }
        }
        Self { w, h, data }
    }

    /// Replaces every flagged pixel by the median of the unflagged pixels in
    /// the surrounding `(2·half+1)²` window (left alone if there are none).
    pub fn inpaint(&mut self, flagged: &[bool], half: usize) {
        let src = self.data.clone();
        let mut window = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if !flagged[y * self.w + x] {
                    continue;
                }
                window.clear();
                for yy in y.saturating_sub(half)..(y + half + 1).min(self.h) {
                    for xx in x.saturating_sub(half)..(x + half + 1).min(self.w) {
                        let i = yy * self.w + xx;
                        if !flagged[i] {
                            window.push(src[i]);
                        }
                    }
                }
                if !window.is_empty() {
                    let mid = window.len() / 2;
                    let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                    self.data[y * self.w + x] = *m;
                }
            }
        }
    }
}

/// Nearest-rank percentile of 8-bit values: the smallest value `v` such that
/// at least `p`% of the inputs are `<= v`. `None` for an empty input.
pub(crate) fn percentile_u8(values: impl IntoIterator<Item = u8>, p: f64) -> Option<u8> {
    let mut hist = [0usize; 256];
    let mut n = 0usize;
    for v in values {
        hist[v as usize] += 1;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut seen = 0;
    for (v, &c) in hist.iter().enumerate() {
        seen += c;
        if seen >= rank {
            return Some(v as u8);
        }
    }
    unreachable!("rank <= n")
}
