//! Spatially varying blur handled region by region: the observation is split
//! by a soft partition of unity, each region goes through the uniform
//! pipeline on its bounding box, and the region latents are blended back
//! with the same weights.

use log::warn;
use rayon::prelude::*;

use crate::error::{DeblurError, Result};
use crate::estimate::{estimate_kernel, Confidence, MotionPattern, FALLBACK_SIDE};
use crate::image::Image;
use crate::kernel::Kernel;
use crate::optimizer::{
    deblur_multiscale_seeded, deblur_multiscale_with, DeblurParams, DeblurResult,
    MultiscaleOptions, TraceRecord,
};

/// Regions narrower than this along a split axis cannot be decomposed further.
pub const MIN_PATCH_SIDE: usize = 64;
/// Cross-fade half-width as a fraction of the cell size.
pub const DEFAULT_OVERLAP: f64 = 0.25;
/// Allowed deviation of mask sums from 1.
pub const PARTITION_TOLERANCE: f64 = 1e-9;

/// Per-pixel weights in `[0, 1]` plus the tight box around their support.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    weights: Image,
    /// `(x0, y0, width, height)`
    bounding_box: (usize, usize, usize, usize),
    /// Tight box around the full-weight pixels, when there are any.
    core_box: Option<(usize, usize, usize, usize)>,
}

impl RegionMask {
    pub fn new(weights: Image) -> Result<RegionMask> {
        if weights.channels() != 1 {
            return Err(DeblurError::InvalidDimensions(
                "masks must be single-channel".into(),
            ));
        }
        if weights.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(DeblurError::InvalidParameter(
                "mask weights must lie in [0, 1]".into(),
            ));
        }
        let Some(bounding_box) = tight_box(&weights, |v| v > 0.0) else {
            return Err(DeblurError::Degenerate("mask has no support".into()));
        };
        let core_box = tight_box(&weights, |v| v >= 1.0 - PARTITION_TOLERANCE);
        Ok(RegionMask {
            weights,
            bounding_box,
            core_box,
        })
    }

    pub fn weights(&self) -> &Image {
        &self.weights
    }

    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        self.bounding_box
    }

    /// Box around the pixels this region owns outright. Kernel estimation
    /// reads the motion pattern there: a cross-fade band carries the
    /// neighbor's blur and can dominate the autocorrelation of the whole box.
    pub fn core_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.core_box
    }
}

fn tight_box(
    weights: &Image,
    inside: impl Fn(f64) -> bool,
) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = weights.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if inside(weights.get(x, y)) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x1 > 0).then(|| (x0, y0, x1 - x0, y1 - y0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionResult {
    pub mask: RegionMask,
    pub kernel: Kernel,
    /// Latent estimate over the mask's bounding box.
    pub latent_patch: Image,
    pub confidence: Confidence,
    pub pattern: Option<MotionPattern>,
    pub energy_trace: Vec<TraceRecord>,
    /// Why the region fell back to the identity result, if it did.
    pub failure: Option<String>,
}

/// Weights of `n` cells along an axis of `len` pixels: 1 inside a cell,
/// raised-cosine cross-fades of half-width `overlap * cell` around each
/// interior boundary, summing to 1 at every pixel.
fn axis_weights(len: usize, n: usize, overlap: f64) -> Vec<Vec<f64>> {
    let cell = len as f64 / n as f64;
    let half = overlap * cell;
    // fraction of weight still on the left of boundary `b` at coordinate `t`
    let fall = |b: f64, t: f64| {
        if half <= 0.0 {
            if t < b {
                1.0
            } else {
                0.0
            }
        } else if t <= b - half {
            1.0
        } else if t >= b + half {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (t - (b - half)) / (2.0 * half)).cos())
        }
    };
    (0..n)
        .map(|i| {
            (0..len)
                .map(|x| {
                    let t = x as f64 + 0.5;
                    let rise = if i == 0 {
                        1.0
                    } else {
                        1.0 - fall(i as f64 * cell, t)
                    };
                    let drop = if i + 1 == n {
                        1.0
                    } else {
                        fall((i + 1) as f64 * cell, t)
                    };
                    rise * drop
                })
                .collect()
        })
        .collect()
}

/// Regular `patches_x x patches_y` decomposition with cross-faded overlaps,
/// row-major. `overlap_fraction = 0` gives binary masks.
pub fn grid_decompose(
    b: &Image,
    patches_x: usize,
    patches_y: usize,
    overlap_fraction: f64,
) -> Result<Vec<RegionMask>> {
    if patches_x == 0 || patches_y == 0 {
        return Err(DeblurError::InvalidParameter(
            "grid counts must be >= 1".into(),
        ));
    }
    if !(0.0..0.5).contains(&overlap_fraction) {
        return Err(DeblurError::InvalidParameter(format!(
            "overlap fraction must lie in [0, 0.5), got {overlap_fraction}"
        )));
    }
    let (w, h) = b.dims();
    for (len, n, axis) in [(w, patches_x, "width"), (h, patches_y, "height")] {
        if n > 1 && len / n < MIN_PATCH_SIDE {
            return Err(DeblurError::InvalidDimensions(format!(
                "{n} patches along {axis} {len} are smaller than {MIN_PATCH_SIDE} px"
            )));
        }
    }
    let wx = axis_weights(w, patches_x, overlap_fraction);
    let wy = axis_weights(h, patches_y, overlap_fraction);
    let mut masks = Vec::with_capacity(patches_x * patches_y);
    for row in &wy {
        for col in &wx {
            masks.push(RegionMask::new(Image::from_fn(w, h, |x, y| {
                col[x] * row[y]
            }))?);
        }
    }
    Ok(masks)
}

/// Normalizes an externally supplied stack of masks into a partition of
/// unity by dividing by the pixelwise sum.
pub fn masks_from_stack(stack: &[Image]) -> Result<Vec<RegionMask>> {
    let first = stack
        .first()
        .ok_or_else(|| DeblurError::InvalidParameter("empty mask stack".into()))?;
    let (w, h) = first.dims();
    if stack
        .iter()
        .any(|m| m.dims() != (w, h) || m.channels() != 1)
    {
        return Err(DeblurError::DimensionMismatch(
            "masks must all be single-channel and equally sized".into(),
        ));
    }
    let mut sum = vec![0.0; w * h];
    for m in stack {
        for (s, v) in sum.iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    if let Some(i) = sum.iter().position(|&s| !(s > 0.0)) {
        return Err(DeblurError::Degenerate(format!(
            "no mask covers pixel ({}, {})",
            i % w,
            i / w
        )));
    }
    stack
        .iter()
        .filter(|m| m.data().iter().any(|&v| v > 0.0))
        .map(|m| {
            let data = m.data().iter().zip(&sum).map(|(v, s)| v / s).collect();
            RegionMask::new(Image::new(w, h, 1, data)?)
        })
        .collect()
}

fn check_partition(b: &Image, masks: &[RegionMask]) -> Result<()> {
    if masks.is_empty() {
        return Err(DeblurError::InvalidParameter("no regions given".into()));
    }
    let (w, h) = b.dims();
    if masks.iter().any(|m| m.weights.dims() != (w, h)) {
        return Err(DeblurError::DimensionMismatch(format!(
            "masks must match the {w}x{h} observation"
        )));
    }
    for i in 0..w * h {
        let s: f64 = masks.iter().map(|m| m.weights.data()[i]).sum();
        if (s - 1.0).abs() > PARTITION_TOLERANCE {
            return Err(DeblurError::InvalidParameter(format!(
                "masks sum to {s} at pixel ({}, {}), not 1",
                i % w,
                i / w
            )));
        }
    }
    Ok(())
}

/// Cores smaller than this on either side are too small to read a motion
/// pattern from, so estimation falls back to the whole box.
const MIN_CORE_SIDE: usize = 32;

fn region_pipeline(
    b: &Image,
    patch: &Image,
    mask: &RegionMask,
    p: &DeblurParams,
    opts: &MultiscaleOptions,
) -> Result<DeblurResult> {
    match mask.core_box {
        Some(core) if core != mask.bounding_box && core.2.min(core.3) >= MIN_CORE_SIDE => {
            let (cx, cy, cw, ch) = core;
            let luma = b.crop(cx, cy, cw, ch)?.luminance();
            let seed = estimate_kernel(&luma, &opts.peaks, opts.shape)?;
            deblur_multiscale_seeded(patch, p, seed)
        }
        _ => deblur_multiscale_with(patch, p, opts, None),
    }
}

fn deblur_region(
    b: &Image,
    mask: &RegionMask,
    p: &DeblurParams,
    opts: &MultiscaleOptions,
) -> Result<RegionResult> {
    let (x0, y0, w, h) = mask.bounding_box;
    let patch = b.crop(x0, y0, w, h)?;
    Ok(match region_pipeline(b, &patch, mask, p, opts) {
        Ok(r) => RegionResult {
            mask: mask.clone(),
            kernel: r.kernel,
            latent_patch: r.latent,
            confidence: r.confidence,
            pattern: r.pattern,
            energy_trace: r.energy_trace,
            failure: None,
        },
        Err(e) => {
            warn!("region at ({x0}, {y0}) size {w}x{h} left unchanged: {e}");
            RegionResult {
                mask: mask.clone(),
                kernel: Kernel::delta(FALLBACK_SIDE),
                latent_patch: patch,
                confidence: Confidence::Low,
                pattern: None,
                energy_trace: Vec::new(),
                failure: Some(e.to_string()),
            }
        }
    })
}

/// `L = sum_i M_i * L_i`, each region latent placed at its bounding box.
pub fn composite(width: usize, height: usize, regions: &[RegionResult]) -> Result<Image> {
    let channels = regions
        .first()
        .map(|r| r.latent_patch.channels())
        .ok_or_else(|| DeblurError::InvalidParameter("no regions to composite".into()))?;
    let mut out = vec![0.0; channels * width * height];
    let plane = width * height;
    for r in regions {
        let (x0, y0, bw, bh) = r.mask.bounding_box;
        if r.latent_patch.dims() != (bw, bh) || r.latent_patch.channels() != channels {
            return Err(DeblurError::DimensionMismatch(
                "region latent does not match its mask box".into(),
            ));
        }
        let weights = r.mask.weights.data();
        let patch = r.latent_patch.data();
        for c in 0..channels {
            for y in 0..bh {
                for x in 0..bw {
                    let i = (y0 + y) * width + x0 + x;
                    out[c * plane + i] += weights[i] * patch[c * bw * bh + y * bw + x];
                }
            }
        }
    }
    Image::new(width, height, channels, out)
}

/// Options for [`deblur_nonuniform`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NonUniformOptions {
    pub multiscale: MultiscaleOptions,
    /// Worker threads for regions; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
}

/// Deblurs every region independently and blends the results. A region whose
/// pipeline fails keeps its blurry pixels and a delta kernel.
pub fn deblur_nonuniform(
    b: &Image,
    masks: &[RegionMask],
    p: &DeblurParams,
    opts: &NonUniformOptions,
) -> Result<(Image, Vec<RegionResult>)> {
    p.validate()?;
    check_partition(b, masks)?;
    let run = || -> Result<Vec<RegionResult>> {
        masks
            .par_iter()
            .map(|m| deblur_region(b, m, p, &opts.multiscale))
            .collect()
    };
    let regions = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| DeblurError::InvalidParameter(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let latent = composite(b.width(), b.height(), &regions)?;
    Ok((latent, regions))
}
