//! Joint kernel/latent optimization:
//!
//! ```text
//! min_{L,k} ||k (x) L - B||^2 + mu1 ||k||^2 + mu2 h(grad L),
//! h(grad L) = sum_xy min(|grad_xy L|^2 / eps^2, 1)
//! ```
//!
//! The latent step uses half-quadratic splitting with an auxiliary gradient
//! field `g`: the `g` update is a per-pixel hard threshold at `mu2 / beta`,
//! the `L` update is a closed-form solve in the frequency domain, and `beta`
//! grows geometrically. The kernel step is the pointwise Fourier-domain
//! minimizer of `||k (x) L - B||^2 + mu1 ||k||^2`, cropped to the kernel
//! support, clipped to non-negative values and normalized.
//!
//! All convolutions and gradients are circular; real photographs are padded
//! with a smooth periodic blend before solving.

use log::debug;
use rustfft::num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::estimate::{
    estimate_kernel, Confidence, KernelEstimate, KernelShape, MotionPattern, PeakConfig,
};
use crate::fourier::{dft2, fft2_in_place, idft2, kernel_spectrum, Spectrum};
use crate::image::Image;
use crate::kernel::{odd_at_least, Kernel};

pub const DEFAULT_MU1: f64 = 2.0;
pub const DEFAULT_MU2: f64 = 0.005;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_BETA_RATE: f64 = 2.0;
pub const DEFAULT_BETA_MAX: f64 = 1e5;
pub const DEFAULT_OUTER_ITERS: usize = 5;
pub const DEFAULT_PYRAMID_SCALE: f64 = 0.75;
pub const DEFAULT_PYRAMID_MIN_KERNEL: usize = 3;

/// Kernel support bounds at full resolution.
pub const MIN_SUPPORT: usize = 3;
pub const MAX_SUPPORT: usize = 51;
/// Pyramid levels whose shorter image side would drop below this are skipped.
pub const MIN_LEVEL_SIDE: usize = 32;
/// Taps below this fraction of the largest are dropped after each refinement.
pub const SMALL_TAP_FRACTION: f64 = 0.1;
/// Splitting rounds at `beta = mu2 / eps^2` after the continuation schedule.
pub const POLISH_ITERS: usize = 10;
/// A recorded energy rising by more than this factor between rounds aborts.
pub const DIVERGENCE_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurParams {
    /// Kernel l2 weight.
    pub mu1: f64,
    /// Gradient penalty weight.
    pub mu2: f64,
    /// Gradient threshold scale of the truncated quadratic, in `[0.1, 1]`.
    pub epsilon: f64,
    /// Initial splitting weight; `None` means `2 mu2 / eps^2`.
    pub beta_init: Option<f64>,
    pub beta_rate: f64,
    pub beta_max: f64,
    /// Latent/kernel alternations per pyramid level.
    pub outer_iters: usize,
    /// Per-level downscale factor, in `(0.5, 1)`.
    pub pyramid_scale: f64,
    /// Smallest kernel side at the coarsest level.
    pub pyramid_min_kernel: usize,
    /// Pad observations with a periodic blend before frequency-domain solves.
    pub pad_boundary: bool,
}

impl Default for DeblurParams {
    fn default() -> Self {
        Self {
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            epsilon: DEFAULT_EPSILON,
            beta_init: None,
            beta_rate: DEFAULT_BETA_RATE,
            beta_max: DEFAULT_BETA_MAX,
            outer_iters: DEFAULT_OUTER_ITERS,
            pyramid_scale: DEFAULT_PYRAMID_SCALE,
            pyramid_min_kernel: DEFAULT_PYRAMID_MIN_KERNEL,
            pad_boundary: true,
        }
    }
}

impl DeblurParams {
    pub fn beta_start(&self) -> f64 {
        self.beta_init
            .unwrap_or(2.0 * self.mu2 / (self.epsilon * self.epsilon))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DeblurError::InvalidParameter(msg));
        if !(self.mu1 > 0.0) || !(self.mu2 > 0.0) {
            return bad(format!(
                "mu1 and mu2 must be positive, got {} and {}",
                self.mu1, self.mu2
            ));
        }
        if !(0.1..=1.0).contains(&self.epsilon) {
            return bad(format!(
                "epsilon must lie in [0.1, 1], got {}",
                self.epsilon
            ));
        }
        if !(self.beta_rate > 1.0) {
            return bad(format!("beta_rate must exceed 1, got {}", self.beta_rate));
        }
        if !(self.beta_start() > 0.0) || !(self.beta_max >= self.beta_start()) {
            return bad(format!(
                "beta schedule must satisfy 0 < beta_init <= beta_max, got {} and {}",
                self.beta_start(),
                self.beta_max
            ));
        }
        if !(self.pyramid_scale > 0.5 && self.pyramid_scale < 1.0) {
            return bad(format!(
                "pyramid_scale must lie in (0.5, 1), got {}",
                self.pyramid_scale
            ));
        }
        if self.pyramid_min_kernel < 1 {
            return bad("pyramid_min_kernel must be >= 1".into());
        }
        Ok(())
    }
}

/// Circular forward-difference gradients of a single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField {
    pub fn of(img: &Image) -> GradientField {
        let (w, h) = img.dims();
        let d = img.plane(0);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            let yn = if y + 1 == h { 0 } else { y + 1 };
            for x in 0..w {
                let xn = if x + 1 == w { 0 } else { x + 1 };
                let v = d[y * w + x];
                gx[y * w + x] = d[y * w + xn] - v;
                gy[y * w + x] = d[yn * w + x] - v;
            }
        }
        GradientField {
            width: w,
            height: h,
            gx,
            gy,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gx.iter().chain(&self.gy).all(|v| v.is_finite())
    }
}

/// `sum min((gx^2 + gy^2) / eps^2, 1)`.
pub fn truncated_quadratic_penalty(g: &GradientField, epsilon: f64) -> f64 {
    let e2 = epsilon * epsilon;
    g.gx.iter()
        .zip(&g.gy)
        .map(|(x, y)| ((x * x + y * y) / e2).min(1.0))
        .sum()
}

/// The three weighted terms of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub data_term: f64,
    pub kernel_term: f64,
    pub gradient_term: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.data_term + self.kernel_term + self.gradient_term
    }
}

fn check_pair(b: &Image, l: &Image) -> Result<()> {
    if !b.same_shape(l) {
        return Err(DeblurError::DimensionMismatch(format!(
            "observation {}x{}x{} vs latent {}x{}x{}",
            b.width(),
            b.height(),
            b.channels(),
            l.width(),
            l.height(),
            l.channels()
        )));
    }
    Ok(())
}

pub fn energy_terms(b: &Image, l: &Image, k: &Kernel, p: &DeblurParams) -> Result<EnergyTerms> {
    check_pair(b, l)?;
    let blurred = crate::fourier::circular_convolve(l, k)?;
    let data_term: f64 = blurred
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let gradient: f64 = l
        .split_channels()
        .iter()
        .map(|c| truncated_quadratic_penalty(&GradientField::of(c), p.epsilon))
        .sum();
    Ok(EnergyTerms {
        data_term,
        kernel_term: p.mu1 * k.sum_sq(),
        gradient_term: p.mu2 * gradient,
    })
}

/// `||k (x) L - B||^2 + mu1 sum k^2 + mu2 h(grad L)`.
pub fn energy(b: &Image, l: &Image, k: &Kernel, p: &DeblurParams) -> Result<f64> {
    Ok(energy_terms(b, l, k, p)?.total())
}

/// Frequency-domain pieces shared by every HQS iteration for one `(B, k)`.
struct LatentSolver {
    width: usize,
    height: usize,
    kernel: Spectrum,
    observed: Spectrum,
    /// `conj(K) B`
    numerator: Vec<Complex64>,
    kernel_power: Vec<f64>,
    grad_power: Vec<f64>,
}

impl LatentSolver {
    fn new(b: &Image, k: &Kernel) -> Result<Self> {
        let (w, h) = b.dims();
        let kernel = kernel_spectrum(k, w, h)?;
        let observed = dft2(b)?;
        let numerator = kernel
            .data()
            .iter()
            .zip(observed.data())
            .map(|(kk, bb)| kk.conj() * bb)
            .collect();
        let kernel_power = kernel.data().iter().map(|z| z.norm_sqr()).collect();
        let mut grad_power = Vec::with_capacity(w * h);
        for v in 0..h {
            let sy = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * v as f64 / h as f64).cos();
            for u in 0..w {
                let sx = 2.0 - 2.0 * (2.0 * std::f64::consts::PI * u as f64 / w as f64).cos();
                grad_power.push(sx + sy);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            kernel,
            observed,
            numerator,
            kernel_power,
            grad_power,
        })
    }

    fn data_term(&self, latent_spec: &[Complex64]) -> f64 {
        let n = (self.width * self.height) as f64;
        latent_spec
            .iter()
            .zip(self.kernel.data())
            .zip(self.observed.data())
            .map(|((l, k), b)| (l * k - b).norm_sqr())
            .sum::<f64>()
            / n
    }

    /// One splitting round at weight `beta`: threshold the gradients of
    /// `latent` into `g`, then solve for the new latent in place. Returns the
    /// objective `||k (x) L - B||^2 + mu2 h(grad L)` of the new latent, whose
    /// gradients are left in `grad`.
    fn step(
        &self,
        latent: &mut Image,
        grad: &mut GradientField,
        beta: f64,
        p: &DeblurParams,
        buf: &mut Vec<Complex64>,
    ) -> Result<f64> {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let thresh = p.mu2 / beta;
        let keep = |i: usize| {
            let (a, b) = (grad.gx[i], grad.gy[i]);
            if a * a + b * b > thresh {
                (a, b)
            } else {
                (0.0, 0.0)
            }
        };
        // div = Dx^T gx + Dy^T gy, with backward differences for the adjoint
        for y in 0..h {
            let yp = if y == 0 { h - 1 } else { y - 1 };
            for x in 0..w {
                let xp = if x == 0 { w - 1 } else { x - 1 };
                let (gx_here, gy_here) = keep(y * w + x);
                let (gx_left, _) = keep(y * w + xp);
                let (_, gy_up) = keep(yp * w + x);
                buf[y * w + x] = Complex64::new((gx_left - gx_here) + (gy_up - gy_here), 0.0);
            }
        }
        fft2_in_place(buf, w, h, FftDirection::Forward);
        for (i, z) in buf.iter_mut().enumerate() {
            let denom = self.kernel_power[i] + beta * self.grad_power[i];
            *z = (self.numerator[i] + beta * *z) / denom;
        }
        let data = self.data_term(buf);
        fft2_in_place(buf, w, h, FftDirection::Inverse);
        let scale = 1.0 / n as f64;
        for (dst, z) in latent.data_mut().iter_mut().zip(buf.iter()) {
            *dst = z.re * scale;
        }
        if !latent.is_finite() {
            return Err(DeblurError::NonFinite(format!(
                "latent estimate at beta = {beta}"
            )));
        }
        *grad = GradientField::of(latent);
        Ok(data + p.mu2 * truncated_quadratic_penalty(grad, p.epsilon))
    }

    /// Runs the HQS schedule from `init`, then [`POLISH_ITERS`] rounds at the
    /// exact-splitting weight.
    fn solve(&self, init: &Image, p: &DeblurParams) -> Result<LatentPair> {
        let n = self.width * self.height;
        let mut latent = init.clone();
        let mut grad = GradientField::of(&latent);
        let init_spec = dft2(init)?;
        let mut best_obj = self.data_term(init_spec.data())
            + p.mu2 * truncated_quadratic_penalty(&grad, p.epsilon);
        let mut best = latent.clone();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut beta = p.beta_start();
        loop {
            let obj = self.step(&mut latent, &mut grad, beta, p, &mut buf)?;
            if obj < best_obj {
                best_obj = obj;
                best.data_mut().copy_from_slice(latent.data());
            }
            if beta >= p.beta_max {
                break;
            }
            beta = (beta * p.beta_rate).min(p.beta_max);
        }
        // At beta = mu2 / eps^2 the split objective minimized over g in
        // {0, grad L} equals the truncated quadratic exactly, so rounds at that
        // weight descend the true objective from the best continuation iterate.
        let sharp = latent.clone();
        let exact = p.mu2 / (p.epsilon * p.epsilon);
        latent.data_mut().copy_from_slice(best.data());
        grad = GradientField::of(&latent);
        for _ in 0..POLISH_ITERS {
            let obj = self.step(&mut latent, &mut grad, exact, p, &mut buf)?;
            if obj < best_obj {
                best_obj = obj;
                best.data_mut().copy_from_slice(latent.data());
            }
        }
        Ok(LatentPair {
            restored: best,
            sharp,
        })
    }
}

/// The two latents one splitting run produces.
struct LatentPair {
    /// Iterate with the lowest objective `||k (x) L - B||^2 + mu2 h(grad L)`,
    /// the initialization included.
    restored: Image,
    /// Last continuation iterate, at `beta_max`: close to piecewise constant,
    /// which is what kernel refinement wants to see.
    sharp: Image,
}

fn solve_pair(b: &Image, k: &Kernel, p: &DeblurParams, init: &Image) -> Result<LatentPair> {
    LatentSolver::new(b, k)?.solve(init, p)
}

/// Non-blind latent estimate for a known kernel, initialized at `L = B`.
/// Multi-channel observations are solved channel by channel.
pub fn estimate_latent(b: &Image, k: &Kernel, p: &DeblurParams) -> Result<Image> {
    estimate_latent_from(b, k, p, b)
}

/// Like [`estimate_latent`] but starting the splitting iterations at `init`.
pub fn estimate_latent_from(
    b: &Image,
    k: &Kernel,
    p: &DeblurParams,
    init: &Image,
) -> Result<Image> {
    p.validate()?;
    check_pair(b, init)?;
    b.ensure_finite("observation")?;
    let mut planes = Vec::with_capacity(b.channels());
    for c in 0..b.channels() {
        let bc = b.channel(c);
        let solver = LatentSolver::new(&bc, k)?;
        planes.push(solver.solve(&init.channel(c), p)?.restored);
    }
    if planes.len() == 1 {
        Ok(planes.pop().unwrap())
    } else {
        Image::from_channels(&planes)
    }
}

/// Circular minimizer of `||k (x) L - B||^2 + mu1 ||k||^2` over the whole
/// grid, zero lag at `(0, 0)`.
pub fn refine_kernel_field(b: &Image, l: &Image, mu1: f64) -> Result<Image> {
    check_pair(b, l)?;
    if b.channels() != 1 {
        return Err(DeblurError::InvalidDimensions(
            "kernel refinement works on single-channel images".into(),
        ));
    }
    if l.data().iter().all(|&v| v == 0.0) {
        return Err(DeblurError::Degenerate("latent image is all zero".into()));
    }
    let fl = dft2(l)?;
    let fb = dft2(b)?;
    let data = fl
        .data()
        .iter()
        .zip(fb.data())
        .map(|(l, b)| l.conj() * b / (l.norm_sqr() + mu1))
        .collect();
    idft2(&Spectrum::new(b.width(), b.height(), data)?)
}

/// Closed-form kernel update cropped to a `support x support` window around
/// the zero lag, negatives clipped, normalized.
pub fn refine_kernel(b: &Image, l: &Image, mu1: f64, support: usize) -> Result<Kernel> {
    if support.is_multiple_of(2) || support > b.width() || support > b.height() {
        return Err(DeblurError::InvalidParameter(format!(
            "kernel support {support} must be odd and fit inside {}x{}",
            b.width(),
            b.height()
        )));
    }
    let field = refine_kernel_field(b, l, mu1)?;
    let r = (support / 2) as isize;
    let mut weights = Vec::with_capacity(support * support);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push(field.get_wrapped(dx, dy).max(0.0));
        }
    }
    if weights.iter().all(|&w| w <= 0.0) {
        return Err(DeblurError::Degenerate(
            "refined kernel has no positive mass inside its support".into(),
        ));
    }
    Kernel::from_weights(support, support, weights)
}

/// One trace row per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Pyramid level, 0 being full resolution.
    pub level: usize,
    pub iteration: usize,
    pub energy: f64,
    pub data_term: f64,
    pub kernel_term: f64,
    pub gradient_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeblurResult {
    pub latent: Image,
    pub kernel: Kernel,
    pub energy_trace: Vec<TraceRecord>,
    pub confidence: Confidence,
    /// Motion pattern behind the initial kernel, when it was estimated.
    pub pattern: Option<MotionPattern>,
}

struct LevelOutput {
    latent: Image,
    kernel: Kernel,
    trace: Vec<TraceRecord>,
}

/// Zeroes taps below `fraction` of the largest one and renormalizes. The
/// closed-form update spreads low-level mass over the whole support; left in
/// place it compounds from round to round.
pub fn suppress_small_taps(k: &Kernel, fraction: f64) -> Result<Kernel> {
    let peak = k.weights().iter().copied().fold(0.0, f64::max);
    let cut = fraction * peak;
    let weights = k
        .weights()
        .iter()
        .map(|&w| if w < cut { 0.0 } else { w })
        .collect();
    Kernel::from_weights(k.width(), k.height(), weights)
}

/// Alternation at one resolution. Each round refines the kernel on the sharp
/// latent of the previous solve, then re-solves the latent for it; a kernel
/// whose re-solved energy is higher is rejected, so the trace is
/// non-increasing and later rounds would only repeat the rejected step.
/// Energies are measured at the sharp latent: at the restored one the
/// energy favors kernels that are shorter and blurrier than the true one.
fn alternate_level(
    b: &Image,
    k0: &Kernel,
    p: &DeblurParams,
    init: Option<&Image>,
    level: usize,
) -> Result<LevelOutput> {
    let support = k0.side();
    let mut kernel = k0.square();
    let mut est = solve_pair(b, &kernel, p, init.unwrap_or(b))?;
    let mut terms = energy_terms(b, &est.sharp, &kernel, p)?;
    let mut current = terms.total();
    let mut trace: Vec<TraceRecord> = Vec::with_capacity(p.outer_iters);
    let mut stalled = false;

    for iteration in 0..p.outer_iters {
        if !stalled {
            let refined = refine_kernel(b, &est.sharp, p.mu1, support)?;
            let cand_k = suppress_small_taps(&refined, SMALL_TAP_FRACTION)?;
            if cand_k == kernel {
                stalled = true;
            } else {
                let cand = solve_pair(b, &cand_k, p, &est.restored)?;
                let cand_terms = energy_terms(b, &cand.sharp, &cand_k, p)?;
                let e = cand_terms.total();
                if !e.is_finite() {
                    return Err(DeblurError::NonFinite("energy after kernel update".into()));
                }
                if e <= current {
                    kernel = cand_k;
                    est = cand;
                    terms = cand_terms;
                    current = e;
                } else {
                    debug!(
                        "level {level} round {iteration}: kernel rejected, energy {e} > {current}"
                    );
                    stalled = true;
                }
            }
        }
        if let Some(prev) = trace.last().map(|t| t.energy) {
            if current > DIVERGENCE_FACTOR * prev {
                return Err(DeblurError::Diverged {
                    previous: prev,
                    current,
                });
            }
        }
        trace.push(TraceRecord {
            level,
            iteration,
            energy: current,
            data_term: terms.data_term,
            kernel_term: terms.kernel_term,
            gradient_term: terms.gradient_term,
        });
    }
    Ok(LevelOutput {
        latent: est.restored,
        kernel,
        trace,
    })
}

/// Single-resolution alternation of latent estimation and kernel refinement,
/// starting from `k0` (whose side fixes the kernel support). The latent is
/// solved for `k0` first; each of the `outer_iters` rounds then refines the
/// kernel and re-solves the latent. The returned latent is always the solve
/// for the returned kernel, and `outer_iters = 0` is a single latent solve.
pub fn alternate(b: &Image, k0: &Kernel, p: &DeblurParams) -> Result<DeblurResult> {
    p.validate()?;
    if b.channels() != 1 {
        return Err(DeblurError::InvalidDimensions(
            "alternation works on single-channel images".into(),
        ));
    }
    let out = alternate_level(b, k0, p, None, 0)?;
    Ok(DeblurResult {
        latent: out.latent,
        kernel: out.kernel,
        energy_trace: out.trace,
        confidence: Confidence::High,
        pattern: None,
    })
}

/// Periodic-blend padding wide enough for a kernel support, grown so padded
/// sides factor into small primes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPad {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

fn is_smooth(mut n: usize) -> bool {
    for f in [2, 3, 5, 7] {
        while n.is_multiple_of(f) {
            n /= f;
        }
    }
    n == 1
}

fn next_smooth(n: usize) -> usize {
    (n..).find(|&m| is_smooth(m)).unwrap()
}

impl BoundaryPad {
    pub const NONE: BoundaryPad = BoundaryPad {
        left: 0,
        right: 0,
        top: 0,
        bottom: 0,
    };

    pub fn for_support(width: usize, height: usize, support: usize) -> BoundaryPad {
        let r = support / 2 + 1;
        let nw = next_smooth(width + 2 * r);
        let nh = next_smooth(height + 2 * r);
        BoundaryPad {
            left: r,
            right: nw - width - r,
            top: r,
            bottom: nh - height - r,
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        if *self == BoundaryPad::NONE {
            return img.clone();
        }
        img.pad_periodic_blend(self.left, self.right, self.top, self.bottom)
    }

    pub fn crop(&self, img: &Image) -> Result<Image> {
        if *self == BoundaryPad::NONE {
            return Ok(img.clone());
        }
        let w = img.width() - self.left - self.right;
        let h = img.height() - self.top - self.bottom;
        img.crop(self.left, self.top, w, h)
    }
}

/// Full-resolution kernel support for an initial kernel: 1.5 times its
/// extent, odd, within `[MIN_SUPPORT, MAX_SUPPORT]` (never below the
/// kernel's own side).
pub fn support_for(initial: &Kernel, pattern: Option<&MotionPattern>) -> usize {
    let extent = pattern.map_or(initial.side() as f64, |m| m.magnitude.max(1.0));
    let s = odd_at_least((1.5 * extent).ceil() as usize, MIN_SUPPORT).min(MAX_SUPPORT);
    odd_at_least(s.max(initial.side()), MIN_SUPPORT)
}

/// Resamples and re-windows a kernel to a square `support` grid.
fn fit_kernel(k: &Kernel, factor: f64, support: usize) -> Result<Kernel> {
    let scaled = if (factor - 1.0).abs() < 1e-12 {
        k.square()
    } else {
        k.rescaled(factor, 1)?
    };
    if scaled.side() > support {
        scaled.cropped_to(support, support)
    } else {
        Ok(scaled.padded_to(support, support))
    }
}

/// Options for [`deblur_multiscale_with`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiscaleOptions {
    pub peaks: PeakConfig,
    pub shape: KernelShape,
}

/// Blind deblurring with default estimation settings.
pub fn deblur_multiscale(
    b: &Image,
    p: &DeblurParams,
    k_init: Option<&Kernel>,
) -> Result<DeblurResult> {
    deblur_multiscale_with(b, p, &MultiscaleOptions::default(), k_init)
}

/// Coarse-to-fine blind deblurring. The initial kernel comes from the
/// phase-only autocorrelation unless `k_init` is given; it is shrunk to the
/// coarsest level, refined by [`alternate`]-style rounds at every level and
/// carried upwards together with the latent estimate. Colour observations are
/// handled on luminance, then each channel is deconvolved with the final
/// kernel.
pub fn deblur_multiscale_with(
    b: &Image,
    p: &DeblurParams,
    opts: &MultiscaleOptions,
    k_init: Option<&Kernel>,
) -> Result<DeblurResult> {
    p.validate()?;
    b.ensure_finite("observation")?;
    let luma = b.luminance();
    if luma.data().iter().all(|&v| v == 0.0) {
        return Err(DeblurError::Degenerate("observation is all zero".into()));
    }
    let seed = match k_init {
        Some(k) => KernelEstimate {
            kernel: k.clone(),
            pattern: None,
            confidence: Confidence::High,
        },
        None => estimate_kernel(&luma, &opts.peaks, opts.shape)?,
    };
    run_multiscale(b, &luma, p, seed)
}

/// Blind deblurring from an initial kernel estimated elsewhere, for callers
/// that read the motion pattern off a different crop than they deblur.
pub(crate) fn deblur_multiscale_seeded(
    b: &Image,
    p: &DeblurParams,
    seed: KernelEstimate,
) -> Result<DeblurResult> {
    p.validate()?;
    b.ensure_finite("observation")?;
    let luma = b.luminance();
    if luma.data().iter().all(|&v| v == 0.0) {
        return Err(DeblurError::Degenerate("observation is all zero".into()));
    }
    run_multiscale(b, &luma, p, seed)
}

fn run_multiscale(
    b: &Image,
    luma: &Image,
    p: &DeblurParams,
    seed: KernelEstimate,
) -> Result<DeblurResult> {
    let KernelEstimate {
        kernel: k0,
        pattern,
        confidence,
    } = seed;
    let support = support_for(&k0, pattern.as_ref());
    let (w, h) = luma.dims();
    if support > w.min(h) {
        return Err(DeblurError::InvalidDimensions(format!(
            "kernel support {support} does not fit a {w}x{h} image"
        )));
    }
    let pad = if p.pad_boundary {
        BoundaryPad::for_support(w, h, support)
    } else {
        BoundaryPad::NONE
    };
    let padded = pad.apply(luma);
    let (pw, ph) = padded.dims();

    // level l has scale^l of the full resolution
    let mut levels: Vec<(usize, usize, usize)> = vec![(pw, ph, support)];
    loop {
        let l = levels.len() as i32;
        let f = p.pyramid_scale.powi(l);
        let ks = support as f64 * f;
        let (lw, lh) = (
            (pw as f64 * f).round() as usize,
            (ph as f64 * f).round() as usize,
        );
        if ks < p.pyramid_min_kernel as f64 || lw.min(lh) < MIN_LEVEL_SIDE {
            break;
        }
        levels.push((
            lw,
            lh,
            odd_at_least(ks.round() as usize, p.pyramid_min_kernel.max(1)),
        ));
    }

    let coarsest = levels.len() - 1;
    let (cw, _, cs) = levels[coarsest];
    let mut kernel = fit_kernel(&k0, cw as f64 / pw as f64, cs)?;
    let mut latent: Option<Image> = None;
    let mut trace = Vec::new();
    for level in (0..=coarsest).rev() {
        let (lw, lh, ls) = levels[level];
        let observed = padded.resize(lw, lh)?;
        let init = match latent.take() {
            Some(prev) => Some(prev.resize(lw, lh)?),
            None => None,
        };
        // A coarse level can wash a good initial kernel out; keep whichever
        // of the carried kernel and a fresh fit of the initial one scores
        // lower at this resolution.
        if level < coarsest {
            let fresh = fit_kernel(&k0, lw as f64 / pw as f64, ls)?;
            if fresh != kernel {
                let start = init.as_ref().unwrap_or(&observed);
                let score = |k: &Kernel| -> Result<f64> {
                    let pair = solve_pair(&observed, k, p, start)?;
                    energy(&observed, &pair.sharp, k, p)
                };
                if score(&fresh)? < score(&kernel)? {
                    debug!("level {level}: restarting from the initial kernel");
                    kernel = fresh;
                }
            }
        }
        let out = alternate_level(&observed, &kernel, p, init.as_ref(), level)?;
        trace.extend(out.trace);
        if level > 0 {
            let (nw, _, ns) = levels[level - 1];
            kernel = fit_kernel(&out.kernel, nw as f64 / lw as f64, ns)?;
            latent = Some(out.latent);
        } else {
            kernel = out.kernel;
            latent = Some(out.latent);
        }
        debug_assert_eq!(
            kernel.side(),
            if level > 0 { levels[level - 1].2 } else { ls }
        );
    }
    let luma_latent = latent.expect("at least one pyramid level");
    let final_latent = if b.channels() == 1 {
        pad.crop(&luma_latent)?
    } else {
        let planes = b
            .split_channels()
            .iter()
            .map(|plane| {
                let padded = pad.apply(plane);
                pad.crop(&estimate_latent(&padded, &kernel, p)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Image::from_channels(&planes)?
    };
    Ok(DeblurResult {
        latent: final_latent,
        kernel,
        energy_trace: trace,
        confidence,
        pattern,
    })
}
