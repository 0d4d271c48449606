//! Restoration quality metrics: PSNR, SSIM, SSD and the kernel error ratio.

use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::image::Image;
use crate::kernel::Kernel;
use crate::optimizer::{estimate_latent, DeblurParams};

/// PSNR written to report files in place of `+inf`.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM configuration: Gaussian window side and sigma, stabilizer constants.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(DeblurError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Sum of squared differences over all samples.
pub fn ssd(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssd(a, b)? / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|t| *t /= s);
    w
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&row[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean single-scale SSIM over all valid 11x11 windows, averaged across
/// channels, for a dynamic range of 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_range(a, b, 1.0)
}

pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(DeblurError::InvalidDimensions(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = ssim_window();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(pa, w, h, &taps);
        let mu_b = filter_valid(pb, w, h, &taps);
        let e_aa = filter_valid(&aa, w, h, &taps);
        let e_bb = filter_valid(&bb, w, h, &taps);
        let e_ab = filter_valid(&ab, w, h, &taps);
        let n = mu_a.len() as f64;
        let sum: f64 = (0..mu_a.len())
            .map(|i| {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = e_aa[i] - ma * ma;
                let vb = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .sum();
        total += sum / n;
    }
    Ok(total / a.channels() as f64)
}

/// Removes `border` pixels from each side (no-op when the image is too small).
pub fn crop_border(img: &Image, border: usize) -> Result<Image> {
    let (w, h) = img.dims();
    if border == 0 || 2 * border >= w || 2 * border >= h {
        return Ok(img.clone());
    }
    img.crop(border, border, w - 2 * border, h - 2 * border)
}

/// Outcome of the SSD error ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorRatio {
    Ratio(f64),
    /// The ground-truth kernel reproduced the reference exactly (zero denominator).
    ExactGroundTruth,
}

impl ErrorRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            ErrorRatio::Ratio(r) => Some(r),
            ErrorRatio::ExactGroundTruth => None,
        }
    }
}

/// SSD of the deconvolution with `k_est` over the SSD of the deconvolution
/// with `k_gt`, both measured against `reference` after removing `border`
/// pixels on every side.
pub fn error_ratio_with_border(
    blurry: &Image,
    k_est: &Kernel,
    k_gt: &Kernel,
    reference: &Image,
    p: &DeblurParams,
    border: usize,
) -> Result<ErrorRatio> {
    check_same(blurry, reference)?;
    let deconv = |k: &Kernel| -> Result<Image> {
        let planes = blurry
            .split_channels()
            .iter()
            .map(|plane| estimate_latent(plane, k, p))
            .collect::<Result<Vec<_>>>()?;
        Image::from_channels(&planes)
    };
    let ref_c = crop_border(reference, border)?;
    let num = ssd(&crop_border(&deconv(k_est)?, border)?, &ref_c)?;
    let den = ssd(&crop_border(&deconv(k_gt)?, border)?, &ref_c)?;
    if den == 0.0 {
        return Ok(ErrorRatio::ExactGroundTruth);
    }
    Ok(ErrorRatio::Ratio(num / den))
}

pub fn error_ratio(
    blurry: &Image,
    k_est: &Kernel,
    k_gt: &Kernel,
    reference: &Image,
    p: &DeblurParams,
) -> Result<ErrorRatio> {
    error_ratio_with_border(blurry, k_est, k_gt, reference, p, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub ssd: f64,
    pub error_ratio: Option<f64>,
}

/// PSNR (peak 1), SSIM and SSD after removing `border` pixels on every side.
pub fn evaluate(result: &Image, reference: &Image, border: usize) -> Result<MetricReport> {
    check_same(result, reference)?;
    let a = crop_border(result, border)?;
    let b = crop_border(reference, border)?;
    Ok(MetricReport {
        psnr: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b)?,
        ssd: ssd(&a, &b)?,
        error_ratio: None,
    })
}

/// Serialized metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ssd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_ratio: Option<f64>,
}

impl MetricReport {
    pub fn to_json(&self, image_id: impl Into<String>) -> ReportJson {
        ReportJson {
            image_id: image_id.into(),
            psnr_db: self.psnr.min(PSNR_CAP_DB),
            ssim: self.ssim,
            ssd: self.ssd,
            error_ratio: self.error_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    fn zip_map(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        Image::from_fn(a.width(), a.height(), |x, y| f(a.get(x, y), b.get(x, y)))
    }

    /// Reference SSIM with an explicit 2-D window loop at every valid position.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let taps = ssim_window();
        let (w, h) = a.dims();
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let c2 = (SSIM_K2 * 1.0f64).powi(2);
        let mut sum = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..SSIM_WINDOW {
                    for i in 0..SSIM_WINDOW {
                        let t = taps[i] * taps[j];
                        ma += t * a.get(x0 + i, y0 + j);
                        mb += t * b.get(x0 + i, y0 + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..SSIM_WINDOW {
                    for i in 0..SSIM_WINDOW {
                        let t = taps[i] * taps[j];
                        let da = a.get(x0 + i, y0 + j) - ma;
                        let db = b.get(x0 + i, y0 + j) - mb;
                        va += t * da * da;
                        vb += t * db * db;
                        cov += t * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        sum / count
    }

    #[test]
    fn psnr_cases() {
        let a = random(16, 16, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::zeros(8, 8), 1.0).is_err());
    }

    #[test]
    fn psnr_matches_direct_loop() {
        let a = random(20, 13, 2);
        let b = random(20, 13, 3);
        let mut acc = 0.0;
        for y in 0..13 {
            for x in 0..20 {
                acc += (a.get(x, y) - b.get(x, y)).powi(2);
            }
        }
        let expect = 10.0 * (1.0 / (acc / 260.0)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random(32, 24, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::zeros(16, 16);
        let one = Image::filled(16, 16, 1.0);
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let c2 = (SSIM_K2 * 1.0f64).powi(2);
        let closed =
            (2.0 * 0.0 * 1.0 + c1) * (2.0 * 0.0 + c2) / ((0.0 + 1.0 + c1) * (0.0 + 0.0 + c2));
        assert!((ssim(&zero, &one).unwrap() - closed).abs() < 1e-12);
        assert!(ssim(&Image::zeros(10, 30), &Image::zeros(10, 30)).is_err());
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let a = random(30, 27, 5);
        let b = zip_map(&a, &random(30, 27, 6), |x, y| 0.7 * x + 0.3 * y);
        let fast = ssim(&a, &b).unwrap();
        assert!((fast - ssim_oracle(&a, &b)).abs() < 1e-6);
        assert!((fast - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random(32, 32, 7);
        let noise = random(32, 32, 8).map(|v| v - 0.5);
        let vals: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|&s| psnr(&a, &zip_map(&a, &noise, |x, n| x + s * n), 1.0).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    }

    #[test]
    fn report_caps_psnr() {
        let r = MetricReport {
            psnr: f64::INFINITY,
            ssim: 1.0,
            ssd: 0.0,
            error_ratio: None,
        };
        let j = r.to_json("x");
        assert_eq!(j.psnr_db, PSNR_CAP_DB);
        let text = serde_json::to_string(&j).unwrap();
        assert!(!text.contains("error_ratio"));
    }
}
