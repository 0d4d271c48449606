//! Blur kernels, their rasterization, and the kernel text format.
//!
//! A kernel is an odd-sized, non-negative grid of weights summing to one. Its
//! center tap sits at `(width / 2, height / 2)`.
//!
//! Text format: the first line is `kw kh`, followed by `kh` rows of `kw`
//! whitespace-separated decimal weights. Readers renormalize to unit sum and
//! reject weights below `-1e-9`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DeblurError, Result};
use crate::image::Image;

/// Weights in `[-NEGATIVE_TOLERANCE, 0)` are treated as rounding noise and clipped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Sub-samples per pixel axis for coverage-weighted rasterization.
const COVERAGE_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel from raw weights, clipping tiny negatives and
    /// normalizing to unit sum.
    pub fn from_weights(width: usize, height: usize, mut weights: Vec<f64>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(DeblurError::InvalidDimensions(format!(
                "kernel sides must be odd, got {width}x{height}"
            )));
        }
        if weights.len() != width * height {
            return Err(DeblurError::InvalidDimensions(format!(
                "kernel data length {} does not match {width}x{height}",
                weights.len()
            )));
        }
        for w in &mut weights {
            if !w.is_finite() {
                return Err(DeblurError::NonFinite("kernel weight".into()));
            }
            if *w < -NEGATIVE_TOLERANCE {
                return Err(DeblurError::Domain(format!("negative kernel weight {w}")));
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DeblurError::Degenerate("kernel has zero mass".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    /// Clips all negative weights to zero, then normalizes.
    pub fn from_signed_weights(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        Self::from_weights(
            width,
            height,
            weights.into_iter().map(|w| w.max(0.0)).collect(),
        )
    }

    /// Centered unit impulse on a `side x side` grid.
    pub fn delta(side: usize) -> Self {
        assert!(side % 2 == 1, "kernel side must be odd");
        let mut weights = vec![0.0; side * side];
        weights[side * side / 2] = 1.0;
        Self {
            width: side,
            height: side,
            weights,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn side(&self) -> usize {
        self.width.max(self.height)
    }

    pub fn radius(&self) -> usize {
        self.side() / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Taps as `(dx, dy, weight)` relative to the center, zeros skipped.
    pub fn taps(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (cx, cy) = self.center();
        self.weights
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w != 0.0)
            .map(move |(i, &w)| {
                (
                    (i % self.width) as isize - cx as isize,
                    (i / self.width) as isize - cy as isize,
                    w,
                )
            })
    }

    /// Zero-pads symmetrically to at least `w x h` (both odd).
    pub fn padded_to(&self, w: usize, h: usize) -> Kernel {
        let w = w.max(self.width);
        let h = h.max(self.height);
        let ox = (w - self.width) / 2;
        let oy = (h - self.height) / 2;
        let mut weights = vec![0.0; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                weights[(y + oy) * w + x + ox] = self.get(x, y);
            }
        }
        Kernel {
            width: w,
            height: h,
            weights,
        }
    }

    pub fn square(&self) -> Kernel {
        let s = self.side();
        self.padded_to(s, s)
    }

    /// Point reflection through the center tap.
    pub fn flipped(&self) -> Kernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Kernel {
            weights,
            ..self.clone()
        }
    }

    /// Removes all-zero border rows/columns in symmetric pairs, keeping the center.
    pub fn trimmed(&self) -> Kernel {
        let (cx, cy) = self.center();
        let mut rx = 0;
        let mut ry = 0;
        for (dx, dy, _) in self.taps() {
            rx = rx.max(dx.unsigned_abs());
            ry = ry.max(dy.unsigned_abs());
        }
        let (w, h) = (2 * rx + 1, 2 * ry + 1);
        let mut weights = Vec::with_capacity(w * h);
        for y in cy - ry..=cy + ry {
            for x in cx - rx..=cx + rx {
                weights.push(self.get(x, y));
            }
        }
        Kernel {
            width: w,
            height: h,
            weights,
        }
    }

    /// Sum of absolute differences with centers aligned.
    pub fn l1_distance(&self, other: &Kernel) -> f64 {
        let w = self.width.max(other.width);
        let h = self.height.max(other.height);
        let a = self.padded_to(w, h);
        let b = other.padded_to(w, h);
        a.weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// Largest absolute tap difference with centers aligned.
    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        let w = self.width.max(other.width);
        let h = self.height.max(other.height);
        let a = self.padded_to(w, h);
        let b = other.padded_to(w, h);
        a.weights
            .iter()
            .zip(&b.weights)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Mass centroid relative to the center tap.
    pub fn centroid(&self) -> (f64, f64) {
        self.taps().fold((0.0, 0.0), |(mx, my), (dx, dy, w)| {
            (mx + w * dx as f64, my + w * dy as f64)
        })
    }

    /// Principal direction in degrees `[0, 180)` and the length of a uniform
    /// segment with the same variance along that direction (`sqrt(12 var)`).
    pub fn principal_axis(&self) -> (f64, f64) {
        let (mx, my) = self.centroid();
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (dx, dy, w) in self.taps() {
            let (x, y) = (dx as f64 - mx, dy as f64 - my);
            sxx += w * x * x;
            syy += w * y * y;
            sxy += w * x * y;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (s, c) = theta.sin_cos();
        let var = sxx * c * c + 2.0 * sxy * s * c + syy * s * s;
        (fold_angle(theta.to_degrees()), (12.0 * var).sqrt())
    }

    /// Lays the kernel out on a `w x h` grid with the center tap at the origin,
    /// wrapping negative offsets around.
    pub fn embed(&self, w: usize, h: usize) -> Result<Image> {
        if self.width > w || self.height > h {
            return Err(DeblurError::InvalidDimensions(format!(
                "kernel {}x{} larger than image {w}x{h}",
                self.width, self.height
            )));
        }
        let mut img = Image::zeros(w, h);
        for (dx, dy, wt) in self.taps() {
            let x = dx.rem_euclid(w as isize) as usize;
            let y = dy.rem_euclid(h as isize) as usize;
            let v = img.get(x, y);
            img.set(x, y, v + wt);
        }
        Ok(img)
    }

    /// Rescales the kernel's spatial extent by `factor`. Shrinking splats every
    /// tap bilinearly so thin lines keep their mass; enlarging samples the
    /// source bilinearly. The result is normalized and has an odd side of at
    /// least `min_side`.
    pub fn rescaled(&self, factor: f64, min_side: usize) -> Result<Kernel> {
        if !(factor > 0.0) {
            return Err(DeblurError::InvalidParameter(format!(
                "kernel scale factor must be positive, got {factor}"
            )));
        }
        let base = self.square();
        let target = odd_at_least(
            (base.side() as f64 * factor).ceil() as usize,
            min_side.max(1),
        );
        let c = (target / 2) as f64;
        let mut out = vec![0.0; target * target];
        if factor < 1.0 {
            for (dx, dy, w) in base.taps() {
                splat(
                    &mut out,
                    target,
                    c + dx as f64 * factor,
                    c + dy as f64 * factor,
                    w,
                );
            }
        } else {
            let bc = (base.side() / 2) as f64;
            for y in 0..target {
                for x in 0..target {
                    let sx = bc + (x as f64 - c) / factor;
                    let sy = bc + (y as f64 - c) / factor;
                    out[y * target + x] = bilinear(&base.weights, base.side(), sx, sy);
                }
            }
        }
        Kernel::from_weights(target, target, out)
    }

    /// Center window of `w x h`, renormalized. Fails if the window holds no mass.
    pub fn cropped_to(&self, w: usize, h: usize) -> Result<Kernel> {
        let w = w.min(self.width);
        let h = h.min(self.height);
        let ox = (self.width - w) / 2;
        let oy = (self.height - h) / 2;
        let mut weights = Vec::with_capacity(w * h);
        for y in oy..oy + h {
            for x in ox..ox + w {
                weights.push(self.get(x, y));
            }
        }
        Kernel::from_weights(w, h, weights)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {}", self.width, self.height).unwrap();
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| format!("{}", self.get(x, y)))
                .collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Kernel> {
        let mut tokens = text.split_whitespace();
        let mut dim = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| DeblurError::Parse(format!("missing kernel {what}")))?
                .parse::<usize>()
                .map_err(|e| DeblurError::Parse(format!("bad kernel {what}: {e}")))
        };
        let kw = dim("width")?;
        let kh = dim("height")?;
        let mut weights = Vec::with_capacity(kw * kh);
        let mut lines = text.lines().skip(1).filter(|l| !l.trim().is_empty());
        for row in 0..kh {
            let line = lines
                .next()
                .ok_or_else(|| DeblurError::Parse(format!("missing kernel row {row}")))?;
            let vals = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| DeblurError::Parse(format!("bad weight {t:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != kw {
                return Err(DeblurError::Parse(format!(
                    "kernel row {row} has {} weights, expected {kw}",
                    vals.len()
                )));
            }
            weights.extend(vals);
        }
        if lines.next().is_some() {
            return Err(DeblurError::Parse("trailing data after kernel rows".into()));
        }
        Kernel::from_weights(kw, kh, weights)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Kernel> {
        Kernel::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Folds an angle in degrees into `[0, 180)`.
pub fn fold_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if a >= 180.0 - 1e-12 {
        0.0
    } else {
        a
    }
}

/// Smallest odd integer `>= max(n, min)`.
pub fn odd_at_least(n: usize, min: usize) -> usize {
    let n = n.max(min).max(1);
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

fn splat(out: &mut [f64], side: usize, x: f64, y: f64, w: f64) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let px = x0 + ox;
            let py = y0 + oy;
            if px >= 0.0 && py >= 0.0 && (px as usize) < side && (py as usize) < side {
                out[py as usize * side + px as usize] += w * wx * wy;
            }
        }
    }
}

fn bilinear(data: &[f64], side: usize, x: f64, y: f64) -> f64 {
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi as usize >= side || yi as usize >= side {
            0.0
        } else {
            data[yi as usize * side + xi as usize]
        }
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x0 + 1.0, y0)
        + (1.0 - fx) * fy * at(x0, y0 + 1.0)
        + fx * fy * at(x0 + 1.0, y0 + 1.0)
}

/// Dense square canvas used to rasterize unit-thickness segments with
/// coverage weighting. Coordinates are relative to the canvas center.
#[derive(Debug, Clone)]
pub(crate) struct Canvas {
    side: usize,
    data: Vec<f64>,
}

impl Canvas {
    pub(crate) fn new(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            side,
            data: vec![0.0; side * side],
        }
    }

    /// Adds `density * coverage` for the 1-px-thick rectangle spanning
    /// `start..end` (lengthwise) to every pixel it touches.
    pub(crate) fn segment(&mut self, start: (f64, f64), end: (f64, f64), density: f64) {
        let (dx, dy) = (end.0 - start.0, end.1 - start.1);
        let len = (dx * dx + dy * dy).sqrt();
        if len <= 0.0 {
            return;
        }
        let (ux, uy) = (dx / len, dy / len);
        let c = (self.side / 2) as f64;
        let lo_x = ((start.0.min(end.0) - 1.5 + c).floor().max(0.0)) as usize;
        let hi_x = ((start.0.max(end.0) + 1.5 + c).ceil() as usize).min(self.side - 1);
        let lo_y = ((start.1.min(end.1) - 1.5 + c).floor().max(0.0)) as usize;
        let hi_y = ((start.1.max(end.1) + 1.5 + c).ceil() as usize).min(self.side - 1);
        let n = COVERAGE_SAMPLES;
        let step = 1.0 / n as f64;
        for py in lo_y..=hi_y {
            for px in lo_x..=hi_x {
                let mut hits = 0usize;
                for sy in 0..n {
                    let y = py as f64 - c - 0.5 + (sy as f64 + 0.5) * step - start.1;
                    for sx in 0..n {
                        let x = px as f64 - c - 0.5 + (sx as f64 + 0.5) * step - start.0;
                        let along = x * ux + y * uy;
                        let across = -x * uy + y * ux;
                        if along >= 0.0 && along <= len && across.abs() <= 0.5 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    self.data[py * self.side + px] += density * hits as f64 / (n * n) as f64;
                }
            }
        }
    }

    /// Crops the smallest odd square around the canvas center holding all
    /// mass (side at least `min_side`) and normalizes it.
    pub(crate) fn into_kernel(self, min_side: usize) -> Result<Kernel> {
        let c = self.side / 2;
        let mut r = 0usize;
        for (i, &w) in self.data.iter().enumerate() {
            if w > 0.0 {
                let (x, y) = (i % self.side, i / self.side);
                r = r.max(x.abs_diff(c)).max(y.abs_diff(c));
            }
        }
        let side = odd_at_least(2 * r + 1, min_side).min(self.side);
        let half = side / 2;
        let mut weights = Vec::with_capacity(side * side);
        for y in c - half..=c + half {
            for x in c - half..=c + half {
                weights.push(self.data[y * self.side + x]);
            }
        }
        Kernel::from_weights(side, side, weights)
    }
}
