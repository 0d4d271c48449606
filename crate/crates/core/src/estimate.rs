//! Initial kernel estimation from the autocorrelation of the absolute
//! phase-only image.
//!
//! Blurring by a straight line turns the phase-only image into two principal
//! copies of the sharp phase-only image separated by the blur extent. The
//! autocorrelation of its absolute value therefore carries a central peak and
//! a mirrored pair of side peaks at `±(blur displacement)`. Non-linear motion
//! adds further bright points.
//!
//! The sign of the motion is unobservable: peaks come in mirrored pairs and
//! the representative of each pair is taken in the `dy > 0` (or `dy = 0,
//! dx > 0`) half-plane. Kernels built here are therefore defined up to a
//! point reflection, which the refinement stage is free to resolve.
//!
//! Multiple bright points are turned into a coarse kernel by superposing the
//! segments from the origin to each representative offset. Other readings of
//! the same autocorrelation (a filled convex hull, a spline through the
//! points) would be equally defensible; this one keeps every segment's
//! length and direction and reduces exactly to the linear case for one pair.

use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::fourier::{autocorrelation, phase_only};
use crate::image::Image;
use crate::kernel::{fold_angle, odd_at_least, Canvas, Kernel};

/// Peak-detection and preprocessing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakConfig {
    /// Lags with Euclidean norm up to this radius belong to the central peak.
    pub central_exclusion_radius: usize,
    /// Minimum strength as a fraction of the strongest off-center value.
    pub relative_threshold: f64,
    /// Upper bound on the number of returned peaks (mirrors included).
    pub max_peaks: usize,
    /// Width of the raised-cosine edge taper as a fraction of each side.
    pub taper_fraction: f64,
    /// Subtract the mean of `|P(B)|` before autocorrelating.
    pub subtract_mean: bool,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            central_exclusion_radius: 3,
            relative_threshold: 0.5,
            max_peaks: 10,
            taper_fraction: 0.1,
            subtract_mean: true,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_threshold > 0.0 && self.relative_threshold < 1.0) {
            return Err(DeblurError::InvalidParameter(format!(
                "relative_threshold must lie in (0, 1), got {}",
                self.relative_threshold
            )));
        }
        if self.central_exclusion_radius < 1 {
            return Err(DeblurError::InvalidParameter(
                "central_exclusion_radius must be >= 1".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.taper_fraction) {
            return Err(DeblurError::InvalidParameter(format!(
                "taper_fraction must lie in [0, 0.5), got {}",
                self.taper_fraction
            )));
        }
        if self.max_peaks < 2 {
            return Err(DeblurError::InvalidParameter(
                "max_peaks must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// A side peak of the autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Integer lag relative to the autocorrelation center.
    pub offset: (i64, i64),
    /// Lag after sub-pixel parabolic refinement.
    pub refined: (f64, f64),
    /// Autocorrelation value, relative to the central peak.
    pub strength: f64,
}

impl Peak {
    fn mirror(&self) -> Peak {
        Peak {
            offset: (-self.offset.0, -self.offset.1),
            refined: (-self.refined.0, -self.refined.1),
            strength: self.strength,
        }
    }

    fn is_representative(&self) -> bool {
        self.offset.1 > 0 || (self.offset.1 == 0 && self.offset.0 > 0)
    }

    pub fn magnitude(&self) -> f64 {
        self.refined.0.hypot(self.refined.1)
    }
}

/// Motion direction and magnitude read off the autocorrelation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPattern {
    /// Degrees in `[0, 180)`, measured from +x towards +y (rows grow downwards).
    pub angle: f64,
    /// Pixels.
    pub magnitude: f64,
    pub peaks: Vec<Peak>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    /// No side peak passed the threshold; the kernel is a placeholder.
    Low,
}

/// How to turn detected peaks into an initial kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// Straight line through the strongest pair.
    Linear,
    /// Superposed segments for every detected pair.
    Coarse,
    /// Linear unless a strong peak lies off the line through the strongest.
    #[default]
    Auto,
}

impl std::str::FromStr for KernelShape {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelShape::Linear),
            "coarse" => Ok(KernelShape::Coarse),
            "auto" => Ok(KernelShape::Auto),
            other => Err(DeblurError::Parse(format!(
                "kernel shape must be linear, coarse or auto, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub kernel: Kernel,
    pub pattern: Option<MotionPattern>,
    pub confidence: Confidence,
}

/// Multiplies a border band of each side by a raised-cosine ramp.
pub fn edge_taper(img: &Image, fraction: f64) -> Image {
    let (w, h) = img.dims();
    let ramp = |n: usize| -> Vec<f64> {
        let band = (fraction * n as f64).round() as usize;
        (0..n)
            .map(|i| {
                let d = i.min(n - 1 - i);
                if d >= band {
                    1.0
                } else {
                    let t = (d as f64 + 0.5) / band as f64;
                    0.5 * (1.0 - (std::f64::consts::PI * t).cos())
                }
            })
            .collect()
    };
    let (rx, ry) = (ramp(w), ramp(h));
    let mut out = img.clone();
    let n = w * h;
    for c in 0..img.channels() {
        let plane = &mut out.data_mut()[c * n..(c + 1) * n];
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] *= rx[x] * ry[y];
            }
        }
    }
    out
}

/// `A(|P(B)|)` after luminance conversion, mean removal and edge tapering,
/// normalized so the central value is 1. The zero lag sits at `(W/2, H/2)`.
pub fn motion_spectrum(blurry: &Image, cfg: &PeakConfig) -> Result<Image> {
    cfg.validate()?;
    blurry.ensure_finite("blurry image")?;
    let luma = blurry.luminance();
    let mean = luma.mean();
    let centered = luma.map(|v| v - mean);
    let scale = centered.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale <= 1e-12 * mean.abs().max(1.0) {
        return Err(DeblurError::Degenerate(
            "image is constant; no motion information".into(),
        ));
    }
    let tapered = edge_taper(&centered, cfg.taper_fraction);
    let mut magnitude = phase_only(&tapered)?.map(f64::abs);
    if cfg.subtract_mean {
        let m = magnitude.mean();
        magnitude = magnitude.map(|v| v - m);
    }
    let acorr = autocorrelation(&magnitude)?;
    let center = acorr.get(acorr.width() / 2, acorr.height() / 2);
    if !(center > 0.0) {
        return Err(DeblurError::Degenerate(
            "phase-only magnitude has no variation".into(),
        ));
    }
    Ok(acorr.scaled(1.0 / center))
}

fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Stationary point of the least-squares quadratic through a 3x3 patch
/// (`patch[row][col]`, center at `[1][1]`). Ridges oriented off-axis are
/// located better than with two independent 1-D parabolas, which remain the
/// fallback when the fit is not a proper maximum nearby.
fn quadratic_offset(patch: &[[f64; 3]; 3]) -> (f64, f64) {
    let (mut s0, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in patch.iter().enumerate() {
        for (i, &f) in row.iter().enumerate() {
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            s0 += f;
            sx += x * f;
            sy += y * f;
            sxx += x * x * f;
            syy += y * y * f;
            sxy += x * y * f;
        }
    }
    let (b, c, e) = (sx / 6.0, sy / 6.0, sxy / 4.0);
    let s = 0.5 * (sxx + syy - 4.0 / 3.0 * s0);
    let d = 0.5 * (s + 0.5 * (sxx - syy));
    let f = 0.5 * (s - 0.5 * (sxx - syy));
    let det = 4.0 * d * f - e * e;
    if d < 0.0 && det > 0.0 {
        let ox = (-2.0 * f * b + e * c) / det;
        let oy = (-2.0 * d * c + e * b) / det;
        if ox.abs() <= 1.0 && oy.abs() <= 1.0 {
            return (ox, oy);
        }
    }
    (
        parabolic_offset(patch[1][0], patch[1][1], patch[1][2]),
        parabolic_offset(patch[0][1], patch[1][1], patch[2][1]),
    )
}

/// Local maxima of a center-normalized autocorrelation outside the central
/// exclusion disc, at least `relative_threshold` times the strongest
/// off-center value, strongest first, as mirrored pairs.
pub fn detect_peaks(acorr: &Image, cfg: &PeakConfig) -> Result<Vec<Peak>> {
    cfg.validate()?;
    if acorr.channels() != 1 {
        return Err(DeblurError::InvalidDimensions(
            "autocorrelation must be single-channel".into(),
        ));
    }
    let (w, h) = acorr.dims();
    let (cx, cy) = ((w / 2) as i64, (h / 2) as i64);
    let r2 = (cfg.central_exclusion_radius * cfg.central_exclusion_radius) as i64;
    let outside = |x: i64, y: i64| (x - cx).pow(2) + (y - cy).pow(2) > r2;
    let at = |x: i64, y: i64| acorr.get_wrapped(x as isize, y as isize);

    let mut max_off = f64::NEG_INFINITY;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if outside(x, y) {
                max_off = max_off.max(at(x, y));
            }
        }
    }
    if !(max_off > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = cfg.relative_threshold * max_off;

    let mut reps = Vec::new();
    for y in cy..h as i64 {
        for x in 0..w as i64 {
            let (dx, dy) = (x - cx, y - cy);
            if !(dy > 0 || (dy == 0 && dx > 0)) || !outside(x, y) {
                continue;
            }
            let v = at(x, y);
            if v < threshold {
                continue;
            }
            // strict against neighbors earlier in raster order, weak against later ones
            let is_max = (-1..=1i64).all(|oy| {
                (-1..=1i64).all(|ox| {
                    if ox == 0 && oy == 0 {
                        return true;
                    }
                    let n = at(x + ox, y + oy);
                    if (oy, ox) < (0, 0) {
                        v > n
                    } else {
                        v >= n
                    }
                })
            });
            if !is_max {
                continue;
            }
            let mut patch = [[0.0; 3]; 3];
            for (j, row) in patch.iter_mut().enumerate() {
                for (i, cell) in row.iter_mut().enumerate() {
                    *cell = at(x + i as i64 - 1, y + j as i64 - 1);
                }
            }
            let (sx, sy) = quadratic_offset(&patch);
            let peak = Peak {
                offset: (dx, dy),
                refined: (dx as f64 + sx, dy as f64 + sy),
                strength: v.min(1.0),
            };
            debug_assert!(peak.is_representative());
            reps.push(peak);
        }
    }
    reps.sort_by(|a, b| {
        b.strength
            .total_cmp(&a.strength)
            .then_with(|| a.offset.cmp(&b.offset))
    });
    reps.truncate(cfg.max_peaks / 2);
    Ok(reps.iter().flat_map(|p| [*p, p.mirror()]).collect())
}

fn representatives(peaks: &[Peak]) -> Vec<Peak> {
    let mut reps: Vec<Peak> = Vec::new();
    for p in peaks {
        let rep = if p.is_representative() {
            *p
        } else {
            p.mirror()
        };
        if !reps.iter().any(|r| r.offset == rep.offset) {
            reps.push(rep);
        }
    }
    reps
}

/// Number of taps of the line connecting two end points `magnitude` apart:
/// the odd count `2 floor(m / 2) + 1`.
fn line_taps(magnitude: f64) -> f64 {
    (2.0 * (magnitude / 2.0).floor() + 1.0).max(1.0)
}

fn grid_side(magnitude: f64) -> usize {
    2 * (magnitude / 2.0).ceil() as usize + 1
}

fn pattern_of(rep: &Peak, peaks: &[Peak]) -> MotionPattern {
    MotionPattern {
        angle: fold_angle(rep.refined.1.atan2(rep.refined.0).to_degrees()),
        magnitude: rep.magnitude(),
        peaks: peaks.to_vec(),
    }
}

/// Segments from a common origin to each `(offset, weight)`, shifted so
/// their joint mass centroid lands on the kernel center.
fn superposed_segments(segments: &[((f64, f64), f64)]) -> Result<Kernel> {
    let mut total = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    let mut reach: f64 = 0.0;
    let mut shapes = Vec::with_capacity(segments.len());
    for &((dx, dy), weight) in segments {
        let m = dx.hypot(dy);
        let taps = line_taps(m);
        let (ux, uy) = if m > 0.0 {
            (dx / m, dy / m)
        } else {
            (1.0, 0.0)
        };
        let start = (-0.5 * ux, -0.5 * uy);
        let end = ((taps - 0.5) * ux, (taps - 0.5) * uy);
        let mass = weight * taps;
        mx += mass * 0.5 * (start.0 + end.0);
        my += mass * 0.5 * (start.1 + end.1);
        total += mass;
        reach = reach.max(taps);
        shapes.push((start, end, weight));
    }
    if !(total > 0.0) {
        return Err(DeblurError::Degenerate("peaks carry no strength".into()));
    }
    let (mx, my) = (mx / total, my / total);
    let mut canvas = Canvas::new(reach.ceil() as usize + 3);
    for (s, e, weight) in shapes {
        canvas.segment((s.0 - mx, s.1 - my), (e.0 - mx, e.1 - my), weight);
    }
    let min_side = segments
        .iter()
        .map(|((dx, dy), _)| grid_side(dx.hypot(*dy)))
        .max()
        .unwrap_or(1);
    canvas.into_kernel(odd_at_least(min_side, 1))
}

/// Relative strength, and distance in pixels of the strongest peak from the
/// candidate's line through the origin, for a peak to count as lying on the
/// same motion line.
const COLLINEAR_STRENGTH: f64 = 0.75;
const COLLINEAR_DISTANCE: f64 = 1.5;

/// Whether `a` lies within [`COLLINEAR_DISTANCE`] of the line through the
/// origin and `b`.
fn collinear(a: &Peak, b: &Peak) -> bool {
    let m = b.refined.0.hypot(b.refined.1);
    let (ux, uy) = (b.refined.0 / m, b.refined.1 / m);
    (a.refined.0 * uy - a.refined.1 * ux).abs() <= COLLINEAR_DISTANCE
}

/// A straight blur yields peaks on one line only; a strong peak off the line
/// through the strongest one indicates a bent trajectory.
fn has_off_line_peak(peaks: &[Peak]) -> bool {
    let reps = representatives(peaks);
    let Some(strongest) = reps
        .iter()
        .copied()
        .max_by(|a, b| a.strength.total_cmp(&b.strength))
    else {
        return false;
    };
    reps.iter().any(|p| {
        p.strength >= COLLINEAR_STRENGTH * strongest.strength
            && !collinear(&strongest, p)
            && !collinear(p, &strongest)
    })
}

/// Straight-line kernel through the strongest mirrored pair (or the outermost
/// strong pair collinear with it): uniform weights along a centered segment, on a square grid of side `2 ceil(m / 2) + 1`.
pub fn linear_kernel_from_peaks(peaks: &[Peak]) -> Result<(Kernel, MotionPattern)> {
    let reps = representatives(peaks);
    let strongest = reps
        .iter()
        .copied()
        .max_by(|a, b| a.strength.total_cmp(&b.strength))
        .ok_or_else(|| DeblurError::InvalidParameter("no peaks to build a kernel from".into()))?;
    // Rasterized line blur also produces weaker echoes part-way along the
    // motion direction; the travel distance is the outermost of them.
    let rep = reps
        .iter()
        .copied()
        .filter(|p| {
            p.strength >= COLLINEAR_STRENGTH * strongest.strength && collinear(&strongest, p)
        })
        .max_by(|a, b| a.magnitude().total_cmp(&b.magnitude()))
        .unwrap_or(strongest);
    let pair = [rep, rep.mirror()];
    let kernel = superposed_segments(&[(rep.refined, 1.0)])?;
    Ok((kernel, pattern_of(&rep, &pair)))
}

/// Coarse kernel for non-linear motion: strength-weighted segments from the
/// center towards every pair's half-plane representative, superposed and
/// normalized.
pub fn coarse_kernel_from_peaks(peaks: &[Peak]) -> Result<Kernel> {
    let reps = representatives(peaks);
    if reps.is_empty() {
        return Err(DeblurError::InvalidParameter(
            "no peaks to build a kernel from".into(),
        ));
    }
    let segments: Vec<((f64, f64), f64)> = reps.iter().map(|p| (p.refined, p.strength)).collect();
    superposed_segments(&segments)
}

/// Side of the low-confidence fallback kernel.
pub const FALLBACK_SIDE: usize = 3;

/// Full estimation: motion spectrum, peaks, kernel. Falls back to a centered
/// 3x3 delta with [`Confidence::Low`] when nothing passes the threshold.
pub fn estimate_kernel(
    blurry: &Image,
    cfg: &PeakConfig,
    shape: KernelShape,
) -> Result<KernelEstimate> {
    let acorr = motion_spectrum(blurry, cfg)?;
    estimate_from_spectrum(&acorr, cfg, shape)
}

pub fn estimate_from_spectrum(
    acorr: &Image,
    cfg: &PeakConfig,
    shape: KernelShape,
) -> Result<KernelEstimate> {
    let peaks = detect_peaks(acorr, cfg)?;
    if peaks.is_empty() {
        return Ok(KernelEstimate {
            kernel: Kernel::delta(FALLBACK_SIDE),
            pattern: None,
            confidence: Confidence::Low,
        });
    }
    let (linear, mut pattern) = linear_kernel_from_peaks(&peaks)?;
    pattern.peaks = peaks.clone();
    let use_coarse = match shape {
        KernelShape::Linear => false,
        KernelShape::Coarse => true,
        KernelShape::Auto => has_off_line_peak(&peaks),
    };
    let kernel = if use_coarse {
        coarse_kernel_from_peaks(&peaks)?
    } else {
        linear
    };
    Ok(KernelEstimate {
        kernel,
        pattern: Some(pattern),
        confidence: Confidence::High,
    })
}
