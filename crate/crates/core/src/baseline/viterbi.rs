//! Closed-contour dynamic programming on an angle × radius lattice.
//!
//! A path picks one radius index per angle; its value is the summed edge
//! score minus `lambda · |Δ|` for every neighbouring pair, including the
//! wrap from the last angle back to the first.

use serde::{Deserialize, Serialize};

/// Row-major `n_angles × n_radii` edge scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLattice {
    pub n_angles: usize,
    pub n_radii: usize,
    pub scores: Vec<f64>,
}

impl EdgeLattice {
    pub fn new(n_angles: usize, n_radii: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), n_angles * n_radii, "lattice size");
        Self {
            n_angles,
            n_radii,
            scores,
        }
    }

    #[inline]
    pub fn at(&self, a: usize, r: usize) -> f64 {
        self.scores[a * self.n_radii + r]
    }
}

/// How the first/last adjacency was enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Best closed path over every start state.
    Exact,
    /// Open pass, then one closed pass anchored at the open path's radius
    /// at the middle angle. Not guaranteed optimal.
    TwoPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedPath {
    pub radii: Vec<usize>,
    pub value: f64,
}

fn allowed(a: usize, b: usize, max_jump: Option<usize>) -> bool {
    max_jump.is_none_or(|m| a.abs_diff(b) <= m)
}

/// Value of a closed path, or `None` if it breaks `max_jump`.
pub fn path_value(lat: &EdgeLattice, radii: &[usize], lambda: f64, max_jump: Option<usize>) -> Option<f64> {
    let n = radii.len();
    let mut v = 0.0;
    for a in 0..n {
        let (r, next) = (radii[a], radii[(a + 1) % n]);
        if !allowed(r, next, max_jump) {
            return None;
        }
        v += lat.at(a, r);
        if n > 1 {
            v -= lambda * r.abs_diff(next) as f64;
        }
    }
    Some(v)
}

/// Angles visited in order starting from `first`.
fn order(n: usize, first: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| (first + i) % n)
}

/// Max-plus DP over angles `first, first+1, …` (wrapping). `start` fixes the
/// radius at `first`; with `close` the wrap penalty back to it is included.
/// Returns the best path indexed by angle, or `None` when nothing is feasible.
fn dp(
    lat: &EdgeLattice,
    lambda: f64,
    max_jump: Option<usize>,
    first: usize,
    start: Option<usize>,
    close: bool,
) -> Option<ClosedPath> {
    let (na, nr) = (lat.n_angles, lat.n_radii);
    let angles: Vec<usize> = order(na, first).collect();
    let mut value: Vec<f64> = (0..nr)
        .map(|r| match start {
            Some(s) if s != r => f64::NEG_INFINITY,
            _ => lat.at(first, r),
        })
        .collect();
    let mut back = vec![0usize; na * nr];
    for (step, &a) in angles.iter().enumerate().skip(1) {
        let mut next = vec![f64::NEG_INFINITY; nr];
        for r in 0..nr {
            let (lo, hi) = match max_jump {
                Some(m) => (r.saturating_sub(m), (r + m).min(nr - 1)),
                None => (0, nr - 1),
            };
            let mut best = f64::NEG_INFINITY;
            let mut arg = lo;
            for p in lo..=hi {
                let v = value[p] - lambda * p.abs_diff(r) as f64;
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            next[r] = best + lat.at(a, r);
            back[step * nr + r] = arg;
        }
        value = next;
    }
    let mut end = None;
    let mut best = f64::NEG_INFINITY;
    for (r, &v) in value.iter().enumerate() {
        let v = match (close, start) {
            (true, Some(s)) if na > 1 => {
                if !allowed(r, s, max_jump) {
                    continue;
                }
                v - lambda * r.abs_diff(s) as f64
            }
            _ => v,
        };
        if v > best {
            best = v;
            end = Some(r);
        }
    }
    let mut r = end?;
    let mut radii = vec![0; na];
    for step in (0..na).rev() {
        radii[angles[step]] = r;
        if step > 0 {
            r = back[step * nr + r];
        }
    }
    Some(ClosedPath { radii, value: best })
}

/// Best closed path: one anchored DP per start radius.
pub fn solve_exact(lat: &EdgeLattice, lambda: f64, max_jump: Option<usize>) -> Option<ClosedPath> {
    let mut best: Option<ClosedPath> = None;
    for s in 0..lat.n_radii {
        if let Some(p) = dp(lat, lambda, max_jump, 0, Some(s), true) {
            if best.as_ref().is_none_or(|b| p.value > b.value) {
                best = Some(p);
            }
        }
    }
    best
}

/// Open DP, then a single closed DP anchored at the middle angle.
pub fn solve_two_pass(lat: &EdgeLattice, lambda: f64, max_jump: Option<usize>) -> Option<ClosedPath> {
    let open = dp(lat, lambda, max_jump, 0, None, false)?;
    let mid = lat.n_angles / 2;
    dp(lat, lambda, max_jump, mid, Some(open.radii[mid]), true)
}

/// Sum of `|Δr|` around the closed path.
pub fn total_variation(radii: &[usize]) -> usize {
    let n = radii.len();
    (0..n).map(|a| radii[a].abs_diff(radii[(a + 1) % n])).sum()
}
