//! 2-D DFT utilities, the phase-only operator, autocorrelation and circular
//! convolution.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries the
//! `1 / (W H)` factor, and spectra use standard DFT ordering with DC at `(0, 0)`.
//! Any grid size is accepted; nothing is padded behind the caller's back.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{DeblurError, Result};
use crate::image::Image;
use crate::kernel::Kernel;

/// Largest imaginary residue `idft2` tolerates before reporting a symmetry bug.
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

/// Coefficients whose magnitude is below this fraction of the spectrum's peak
/// magnitude have no usable phase and are mapped to `1 + 0i`.
pub const ZERO_MAGNITUDE_TOLERANCE: f64 = 1e-12;

/// Default pole tolerance for [`tophat_phase_profile`].
pub const POLE_TOLERANCE: f64 = 1e-6;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Complex frequency grid with the same dimensions as its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(width: usize, height: usize, data: Vec<Complex64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DeblurError::InvalidDimensions(
                "spectrum must be at least 1x1".into(),
            ));
        }
        if data.len() != width * height {
            return Err(DeblurError::InvalidDimensions(format!(
                "spectrum data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: Complex64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[v * self.width + u]
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.dims(), other.dims());
        Spectrum {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
            ..*self
        }
    }

    pub fn conj(&self) -> Spectrum {
        Spectrum {
            data: self.data.iter().map(|z| z.conj()).collect(),
            ..*self
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn transpose<T: Copy + Default>(w: usize, h: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// In-place 2-D transform of a row-major `w x h` buffer (unnormalized).
pub(crate) fn fft2_in_place(buf: &mut Vec<Complex64>, w: usize, h: usize, dir: FftDirection) {
    let row = plan(w, dir);
    row.process(buf);
    let mut t = transpose(w, h, buf);
    let col = plan(h, dir);
    col.process(&mut t);
    *buf = transpose(h, w, &t);
}

fn check_single(img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(DeblurError::InvalidDimensions(format!(
            "expected a single-channel image, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

/// Unnormalized forward 2-D DFT.
pub fn dft2(img: &Image) -> Result<Spectrum> {
    check_single(img)?;
    img.ensure_finite("dft2 input")?;
    let (w, h) = img.dims();
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, w, h, FftDirection::Forward);
    Spectrum::new(w, h, buf)
}

/// Inverse DFT with `1 / (W H)` normalization, keeping the complex result.
pub fn idft2_complex(spec: &Spectrum) -> Vec<Complex64> {
    let (w, h) = spec.dims();
    let mut buf = spec.data.clone();
    fft2_in_place(&mut buf, w, h, FftDirection::Inverse);
    let norm = 1.0 / (w * h) as f64;
    for z in &mut buf {
        *z *= norm;
    }
    buf
}

/// Inverse DFT of a conjugate-symmetric spectrum. The imaginary residue is
/// checked against [`IMAGINARY_TOLERANCE`] and then dropped.
pub fn idft2(spec: &Spectrum) -> Result<Image> {
    if !spec.is_finite() {
        return Err(DeblurError::NonFinite("idft2 input".into()));
    }
    let buf = idft2_complex(spec);
    let residue = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > IMAGINARY_TOLERANCE {
        return Err(DeblurError::ImaginaryResidue {
            residue,
            tolerance: IMAGINARY_TOLERANCE,
        });
    }
    Image::gray(
        spec.width,
        spec.height,
        buf.into_iter().map(|z| z.re).collect(),
    )
}

/// Replaces every coefficient by its unit phasor.
pub fn phase_spectrum(spec: &Spectrum) -> Spectrum {
    let peak = spec.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = peak * ZERO_MAGNITUDE_TOLERANCE;
    Spectrum {
        data: spec
            .data
            .iter()
            .map(|&z| {
                let m = z.norm();
                if m <= floor {
                    Complex64::new(1.0, 0.0)
                } else {
                    z / m
                }
            })
            .collect(),
        ..*spec
    }
}

/// Phase-only image: inverse transform of the unit-magnitude spectrum.
pub fn phase_only(img: &Image) -> Result<Image> {
    check_single(img)?;
    if img.data().iter().all(|&v| v == 0.0) {
        return Err(DeblurError::Degenerate(
            "phase is undefined for an all-zero image".into(),
        ));
    }
    idft2(&phase_spectrum(&dft2(img)?))
}

/// Circular autocorrelation `F^-1(F(I) conj(F(I)))`, shifted so the zero lag
/// sits at `(W / 2, H / 2)`.
pub fn autocorrelation(img: &Image) -> Result<Image> {
    let spec = dft2(img)?;
    let power = Spectrum {
        data: spec
            .data
            .iter()
            .map(|z| Complex64::new(z.norm_sqr(), 0.0))
            .collect(),
        ..spec
    };
    Ok(center_shift(&idft2(&power)?))
}

/// Moves index `(0, 0)` to `(W / 2, H / 2)`.
pub fn center_shift(img: &Image) -> Image {
    img.shifted((img.width() / 2) as isize, (img.height() / 2) as isize)
}

/// Spectrum of a kernel laid out circularly on a `w x h` grid with its center
/// tap at the origin.
pub fn kernel_spectrum(k: &Kernel, w: usize, h: usize) -> Result<Spectrum> {
    dft2(&k.embed(w, h)?)
}

/// Per-channel circular convolution `img (x) k`, evaluated in the frequency domain.
pub fn circular_convolve(img: &Image, k: &Kernel) -> Result<Image> {
    let (w, h) = img.dims();
    let ks = kernel_spectrum(k, w, h)?;
    let mut planes = Vec::with_capacity(img.channels());
    for plane in img.split_channels() {
        planes.push(idft2(&dft2(&plane)?.mul(&ks))?);
    }
    if planes.len() == 1 {
        Ok(planes.pop().unwrap())
    } else {
        Image::from_channels(&planes)
    }
}

/// `sinc(t) = sin(t) / t`, with `sinc(0) = 1`.
pub fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        t.sin() / t
    }
}

/// Continuous phase-only profile of a top-hat of width `w`:
/// `(sqrt(2 pi) / w) sinc(pi x / w) / cos(pi x / w)`.
pub fn tophat_phase_profile(w: f64, x: f64) -> Result<f64> {
    tophat_phase_profile_with_tolerance(w, x, POLE_TOLERANCE)
}

pub fn tophat_phase_profile_with_tolerance(w: f64, x: f64, pole_tolerance: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(DeblurError::Domain(format!(
            "top-hat width must be positive, got {w}"
        )));
    }
    let t = std::f64::consts::PI * x / w;
    let c = t.cos();
    if c.abs() <= pole_tolerance {
        return Err(DeblurError::Domain(format!(
            "x = {x} is a pole of the profile for width {w}"
        )));
    }
    Ok((2.0 * std::f64::consts::PI).sqrt() / w * sinc(t) / c)
}
